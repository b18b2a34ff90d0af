import json

import numpy as np
import pytest

from intensign.corpus import (
    FRAME_DIM,
    Corpus,
    CorpusError,
    NormStats,
    SampleInstance,
    SynthConfig,
    Vocabulary,
    intensity_render_plan,
    load_corpus,
    pos_filter_sample,
    render_gloss_pose,
    save_corpus,
    synth_generate,
)


def make_instance(idx, frames=True, split="x"):
    rng = np.random.default_rng(idx)
    return SampleInstance(
        id=f"{split}-{idx}",
        text=["wetter", "heute"],
        gloss=["WETTER"],
        frames=rng.normal(size=(5, FRAME_DIM)) if frames else None,
    )


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


@pytest.fixture
def corpus_dir(tmp_path):
    def record(i):
        rng = np.random.default_rng(i)
        return {
            "id": f"r{i}",
            "text": ["sehr", "bewoelkt"],
            "gloss": ["WOLKE"],
            "frames": rng.normal(size=(4, FRAME_DIM)).tolist(),
        }

    write_jsonl(tmp_path / "train.jsonl", [record(i) for i in range(3)])
    write_jsonl(tmp_path / "dev.jsonl", [record(10)])
    write_jsonl(tmp_path / "test.jsonl", [record(20)])
    return tmp_path


def test_load_well_formed(corpus_dir):
    corpus = load_corpus(corpus_dir)
    assert len(corpus.train) == 3
    assert corpus.train[0].frames.shape == (4, FRAME_DIM)


def test_load_short_frame_names_instance(corpus_dir):
    rec = {"id": "bad-one", "text": ["a"], "gloss": ["A"], "frames": [[0.0] * 149]}
    write_jsonl(corpus_dir / "dev.jsonl", [rec])
    with pytest.raises(CorpusError, match="bad-one"):
        load_corpus(corpus_dir)


def test_load_malformed_json_reports_line(corpus_dir):
    with open(corpus_dir / "test.jsonl", "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(CorpusError, match=r"test\.jsonl:2"):
        load_corpus(corpus_dir)


def test_missing_split_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path)


def test_zero_variance_dimension_gets_unit_std(corpus_dir):
    records = []
    for i in range(3):
        rng = np.random.default_rng(i)
        frames = rng.normal(size=(4, FRAME_DIM))
        frames[:, 7] = 2.5
        records.append({"id": f"c{i}", "text": ["a"], "gloss": ["A"], "frames": frames.tolist()})
    write_jsonl(corpus_dir / "train.jsonl", records)
    corpus = load_corpus(corpus_dir)
    assert corpus.stats.std[7] == 1.0
    assert np.all(corpus.stats.std > 0)


def test_save_load_round_trip_bit_exact(corpus_dir, tmp_path):
    corpus = load_corpus(corpus_dir)
    out = tmp_path / "copy"
    save_corpus(corpus, out)
    reloaded = load_corpus(out)
    for a, b in zip(corpus.all_instances(), reloaded.all_instances()):
        assert a.id == b.id and a.text == b.text and a.gloss == b.gloss
        assert np.array_equal(a.frames, b.frames)
    assert np.array_equal(corpus.stats.mean, reloaded.stats.mean)
    assert np.array_equal(corpus.stats.std, reloaded.stats.std)
    # saving the reloaded corpus reproduces the files byte for byte
    out2 = tmp_path / "copy2"
    save_corpus(reloaded, out2)
    for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "stats.json"):
        assert (out / name).read_bytes() == (out2 / name).read_bytes()


def test_normalize_denormalize_recovers(corpus_dir):
    corpus = load_corpus(corpus_dir)
    inst = corpus.train[0]
    raw = corpus.raw_frames(inst)
    again = corpus.stats.normalize(raw)
    assert np.allclose(again, inst.frames, atol=1e-6)


def test_duplicate_ids_rejected():
    a, b = make_instance(1), make_instance(1)
    with pytest.raises(CorpusError, match="duplicate"):
        Corpus([a], [b], [])


def test_labels_round_trip(corpus_dir, tmp_path):
    corpus = load_corpus(corpus_dir)
    for inst in corpus.train:
        inst.gloss_labels = [2]
    out = tmp_path / "labeled"
    save_corpus(corpus, out)
    assert (out / "train.labels.tsv").exists()
    reloaded = load_corpus(out)
    assert all(i.gloss_labels == [2] for i in reloaded.train)


# --- POS filter --------------------------------------------------------------


def test_pos_filter_selects_modifier_texts():
    selected = SampleInstance(
        id="s1", text=["very", "cloudy"], text_pos=["ADV", "ADJ"], gloss=["WOLKE"])
    no_modifier = SampleInstance(
        id="s2", text=["rain", "comes"], text_pos=["NOUN", "VERB"], gloss=["REGEN"])
    gloss_has_modifier = SampleInstance(
        id="s3", text=["very", "cloudy"], text_pos=["ADV", "ADJ"], gloss=["CLOUDY"])
    gloss_has_modifier.text[1] = "cloudy"
    gloss_has_modifier.gloss = ["cloudy".upper()]
    result = pos_filter_sample([selected, no_modifier, gloss_has_modifier])
    assert [i.id for i in result] == ["s1"]


def test_pos_filter_requires_tags():
    inst = SampleInstance(id="s", text=["a"], gloss=["A"])
    with pytest.raises(CorpusError, match="text_pos"):
        pos_filter_sample([inst])


def test_pos_filter_idempotent_subset():
    insts = [
        SampleInstance(id=f"p{i}", text=["very", "warm"], text_pos=["ADV", "ADJ"], gloss=["WARM" if i % 2 else "SONNE"])
        for i in range(6)
    ]
    once = pos_filter_sample(insts)
    twice = pos_filter_sample(once)
    assert once == twice
    assert set(i.id for i in once) <= set(i.id for i in insts)


# --- vocabulary ---------------------------------------------------------------


def test_vocab_reserved_and_lookup():
    vocab = Vocabulary.build([["A", "B"], ["B"]])
    assert len(vocab) == 2 + 4
    assert vocab.index("<pad>") == 0
    assert vocab.index("ZZZ") == Vocabulary.UNK
    assert vocab.token(vocab.index("A")) == "A"


def test_vocab_empty_inner_sequence_ok():
    vocab = Vocabulary.build([[], ["A"]])
    assert len(vocab) == 5


def test_vocab_empty_collection_rejected():
    with pytest.raises(CorpusError):
        Vocabulary.build([])


# --- synthetic generator --------------------------------------------------------


def test_synth_deterministic(tmp_path):
    cfg = SynthConfig(seed=7, instances=20, vocab_size=5)
    c1 = synth_generate(cfg)
    c2 = synth_generate(cfg)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    save_corpus(c1, d1)
    save_corpus(c2, d2)
    for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "stats.json"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_synth_durations_match_fig_ratio():
    cfg = SynthConfig(base_frames=10, duration_multiplier=1.7)
    plain, _, _ = intensity_render_plan(cfg, 0)
    high, _, _ = intensity_render_plan(cfg, 2)
    assert (plain, high) == (10, 17)
    assert render_gloss_pose(3, plain, seed=1).shape == (10, FRAME_DIM)
    assert render_gloss_pose(3, high, seed=1).shape == (17, FRAME_DIM)


def test_amplitude_scaling_doubles_peak_deviation():
    base = render_gloss_pose(4, 12, amplitude=1.0, seed=9)
    scaled = render_gloss_pose(4, 12, amplitude=2.0, seed=9)
    dev_base = np.abs(base - base.mean(axis=0)).max(axis=0)
    dev_scaled = np.abs(scaled - scaled.mean(axis=0)).max(axis=0)
    assert np.allclose(dev_scaled, 2.0 * dev_base, atol=1e-6)


def test_synth_config_validation():
    with pytest.raises(CorpusError):
        synth_generate(SynthConfig(instances=0))
    with pytest.raises(CorpusError):
        synth_generate(SynthConfig(vocab_size=0))
    with pytest.raises(CorpusError):
        synth_generate(SynthConfig(base_frames=3))
    with pytest.raises(CorpusError):
        synth_generate(SynthConfig(duration_multiplier=1.0))


def test_synth_labels_and_text_agree():
    corpus = synth_generate(SynthConfig(seed=3, instances=30, vocab_size=6))
    for inst in corpus.all_instances():
        assert inst.gloss_labels is not None
        assert len(inst.gloss_labels) == len(inst.gloss)
        n_very = inst.text.count("very")
        n_slightly = inst.text.count("slightly")
        assert n_very == sum(1 for l in inst.gloss_labels if l == 2)
        assert n_slightly == sum(1 for l in inst.gloss_labels if l == 1)


def test_norm_stats_empty_frames():
    stats = NormStats.from_frames([])
    assert np.array_equal(stats.std, np.ones(FRAME_DIM))
