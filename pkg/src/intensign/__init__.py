"""Intensification-aware sign language generation lab."""

from intensign.backtrans import BackTranslator, ctc_loss
from intensign.checkpoint import load_checkpoint, save_checkpoint
from intensign.corpus import (
    Corpus,
    SampleInstance,
    SynthConfig,
    Vocabulary,
    load_corpus,
    pos_filter_sample,
    save_corpus,
    synth_generate,
)
from intensign.dynsel import DynamicSelectionGenerator, mix_hard, mix_soft
from intensign.intensify import (
    GlossEnhancer,
    IntensityLabel,
    Strategy,
    apply_strategy,
    partition_by_intensity,
    strip_enhancement,
)
from intensign.metrics import bleu, bootstrap_significance, fleiss_kappa, modifier_density, permutation_test, rouge_l
from intensign.ptgen import PoseSequence, ProgressiveTransformerGenerator, counter_targets
from intensign.tagger import IntensityTagger

__all__ = [
    "BackTranslator",
    "Corpus",
    "DynamicSelectionGenerator",
    "GlossEnhancer",
    "IntensityLabel",
    "IntensityTagger",
    "PoseSequence",
    "ProgressiveTransformerGenerator",
    "SampleInstance",
    "Strategy",
    "SynthConfig",
    "Vocabulary",
    "apply_strategy",
    "bleu",
    "bootstrap_significance",
    "counter_targets",
    "ctc_loss",
    "fleiss_kappa",
    "load_checkpoint",
    "load_corpus",
    "mix_hard",
    "mix_soft",
    "modifier_density",
    "partition_by_intensity",
    "permutation_test",
    "pos_filter_sample",
    "rouge_l",
    "save_checkpoint",
    "save_corpus",
    "strip_enhancement",
    "synth_generate",
]

__version__ = "0.1.0"
