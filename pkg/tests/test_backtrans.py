import itertools
import math

import numpy as np
import pytest

from intensign.autodiff import Tensor, grad_check, log_softmax
from intensign.backtrans import BackTranslator, ctc_alignment_floor, ctc_loss
from intensign.corpus import FRAME_DIM
from intensign.ptgen import PoseSequence


def collapse(path):
    """CTC collapse: merge repeats, then drop blanks (index 0)."""
    merged = [k for k, _ in itertools.groupby(path)]
    return tuple(k for k in merged if k != 0)


def brute_force_ctc_nll(log_probs: np.ndarray, targets) -> float:
    """Sum path probabilities by explicit enumeration (exponential; T <= 6)."""
    t_total, n_classes = log_probs.shape
    target = tuple(int(t) for t in targets)
    total = 0.0
    for path in itertools.product(range(n_classes), repeat=t_total):
        if collapse(path) == target:
            total += math.exp(sum(log_probs[t, c] for t, c in enumerate(path)))
    if total == 0.0:
        return math.inf
    return -math.log(total)


def random_log_probs(t, c, rng):
    logits = rng.normal(size=(t, c))
    logits -= np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return logits


# --- CTC ------------------------------------------------------------------------


def test_ctc_one_hot_single_frame():
    # p(g) = 1 at the only frame -> loss 0
    log_probs = np.log(np.array([[1e-30, 1.0 - 2e-30, 1e-30]]))
    loss = ctc_loss(Tensor(log_probs), [1])
    assert loss.item() == pytest.approx(0.0, abs=1e-9)


def test_ctc_uniform_three_frames_matches_enumeration():
    log_probs = np.full((3, 3), np.log(1.0 / 3.0))
    loss = ctc_loss(Tensor(log_probs), [1, 2])
    expected = brute_force_ctc_nll(log_probs, [1, 2])
    assert loss.item() == pytest.approx(expected, abs=1e-9)


def test_ctc_target_longer_than_frames_errors():
    log_probs = np.full((2, 3), np.log(1.0 / 3.0))
    with pytest.raises(ValueError):
        ctc_loss(Tensor(log_probs), [1, 2, 1])
    # repeated labels need a separating blank
    with pytest.raises(ValueError):
        ctc_loss(Tensor(np.full((2, 2), np.log(0.5))), [1, 1])
    assert ctc_alignment_floor([1, 1, 2]) == 4


def test_ctc_rejects_blank_in_target():
    with pytest.raises(ValueError):
        ctc_loss(Tensor(np.full((3, 3), np.log(1 / 3))), [0, 1])


def test_ctc_exhaustive_equivalence_small():
    # all combinations T<=6, |target|<=3, alphabet<=3, vs brute force within 1e-9
    rng = np.random.default_rng(42)
    checked = 0
    for g in range(1, 4):
        c = g + 1
        for length in range(0, 4):
            for target in itertools.product(range(1, g + 1), repeat=length):
                floor = ctc_alignment_floor(target)
                for t in range(max(floor, 1), 7):
                    log_probs = random_log_probs(t, c, rng)
                    dp = ctc_loss(Tensor(log_probs), list(target)).item()
                    ref = brute_force_ctc_nll(log_probs, target)
                    assert dp == pytest.approx(ref, abs=1e-9), (t, target, g)
                    checked += 1
    assert checked > 200


def test_ctc_grad_check():
    rng = np.random.default_rng(7)
    for target in ([1], [1, 2], [2, 1, 2]):
        for _ in range(5):
            point = Tensor(rng.normal(size=(5, 4)), requires_grad=True)

            def f(p):
                return ctc_loss(log_softmax(p, axis=-1), target)

            assert grad_check(f, point) < 1e-4


# --- back-translator ---------------------------------------------------------------


TINY = dict(layers=1, heads=2, embed_dim=16, ff_dim=32, learning_rate=3e-3,
            epochs=5, seed=3)


def toy_data(n=3, t=8, seed=0):
    rng = np.random.default_rng(seed)
    frames = [rng.normal(size=(t + i, FRAME_DIM)) for i in range(n)]
    glosses = [[f"G{i % 2}", f"G{(i + 1) % 2}"] for i in range(n)]
    texts = [[f"w{i}", "x", f"w{(i + 1) % n}"] for i in range(n)]
    return frames, glosses, texts


def test_fit_and_translate_runs():
    frames, glosses, texts = toy_data()
    model = BackTranslator(**TINY).fit(frames, glosses, texts)
    out = model.translate(frames[0])
    assert isinstance(out, list)
    assert all(isinstance(tok, str) for tok in out)


def test_memorizes_single_instance():
    frames, glosses, texts = toy_data(n=1)
    model = BackTranslator(**{**TINY, "epochs": 150}).fit(frames, glosses, texts)
    assert model.translate(frames[0]) == texts[0]


def test_translate_respects_max_len():
    frames, glosses, texts = toy_data()
    model = BackTranslator(**TINY).fit(frames, glosses, texts)
    assert len(model.translate(frames[0], max_len=1)) <= 1


def test_translate_deterministic_and_counter_dropped():
    frames, glosses, texts = toy_data()
    model = BackTranslator(**TINY).fit(frames, glosses, texts)
    seq = PoseSequence(frames[1], np.linspace(0.1, 1.0, frames[1].shape[0]))
    assert model.translate(seq) == model.translate(frames[1])


def test_pure_translation_mode():
    frames, glosses, texts = toy_data()
    model = BackTranslator(**{**TINY, "recognition_weight": 0.0}).fit(frames, glosses, texts)
    assert "recognition.w" not in model._store.params
    assert np.isfinite(model.loss_curve_[-1])


def test_pure_recognition_mode():
    frames, glosses, texts = toy_data()
    model = BackTranslator(**{**TINY, "translation_weight": 0.0}).fit(frames, glosses, texts)
    assert "decoder.out.w" not in model._store.params


def test_weights_isolate_losses_exactly():
    frames, glosses, texts = toy_data(n=2)
    both = BackTranslator(**{**TINY, "epochs": 1, "recognition_weight": 1.0,
                             "translation_weight": 1.0})
    both.fit(frames, glosses, texts)
    norm, gids, tids = (
        ((np.asarray(frames[0]) - both.norm_mean_) / both.norm_std_).astype(np.float32),
        [both._gloss_index[g] for g in glosses[0]],
        both.text_vocab_.encode(texts[0]),
    )
    total = both._instance_loss(norm, gids, tids).item()
    both.recognition_weight, both.translation_weight = 1.0, 0.0
    rec_only = both._instance_loss(norm, gids, tids).item()
    both.recognition_weight, both.translation_weight = 0.0, 1.0
    tr_only = both._instance_loss(norm, gids, tids).item()
    assert total == pytest.approx(rec_only + tr_only, rel=1e-6)


def test_training_deterministic():
    frames, glosses, texts = toy_data()
    l1 = BackTranslator(**TINY).fit(frames, glosses, texts).loss_curve_
    l2 = BackTranslator(**TINY).fit(frames, glosses, texts).loss_curve_
    assert l1 == l2


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        BackTranslator(recognition_weight=-1).fit(*toy_data())
