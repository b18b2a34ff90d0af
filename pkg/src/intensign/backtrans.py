"""Back-translation evaluator: pose sequences -> German-style text.

A small transformer reads (T, 150) joint frames and trains two heads at once:
a per-frame gloss recognizer under CTC (blank index 0) and an autoregressive
text decoder under cross-entropy, combined as

    loss = recognition_weight * CTC + translation_weight * CE

Greedy decoding turns generated poses back into token sequences that the
metrics module scores against reference transcripts.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from intensign import autodiff as ad
from intensign import transformer as tf
from intensign.autodiff import Adam, DivergenceError, Tensor, seeded_rng
from intensign.corpus import FRAME_DIM, Vocabulary
from intensign.ptgen import PoseSequence, add_gaussian_noise

BLANK = 0


def ctc_alignment_floor(targets) -> int:
    """Minimum frame count able to emit the target (repeats need a blank)."""
    targets = list(targets)
    repeats = sum(1 for a, b in zip(targets, targets[1:]) if a == b)
    return len(targets) + repeats


def ctc_loss(log_probs: Tensor, targets) -> Tensor:
    """Negative log-likelihood of a label sequence under per-frame log-probs.

    log_probs: (T, C) normalized log-probabilities with the blank at index 0.
    Runs the standard forward dynamic program over the blank-interleaved
    target in log space; fully differentiable through the autodiff graph.
    """
    targets = [int(t) for t in targets]
    if log_probs.ndim != 2:
        raise ValueError(f"log_probs must be (T, C), got {log_probs.shape}")
    t_total, n_classes = log_probs.shape
    if any(t <= 0 or t >= n_classes for t in targets):
        raise ValueError("targets must be class indices in [1, C); 0 is the blank")
    if t_total < ctc_alignment_floor(targets):
        raise ValueError(
            f"no alignment exists: {t_total} frames cannot emit {len(targets)} labels "
            f"(floor {ctc_alignment_floor(targets)}); loss would be infinite")

    ext = [BLANK]
    for t in targets:
        ext.extend([t, BLANK])
    s = len(ext)
    dtype = log_probs.dtype
    emissions = ad.index_select(log_probs, np.asarray(ext), axis=1)  # (T, S)

    init = np.full(s, -np.inf, dtype=dtype)
    init[0] = 0.0
    if s > 1:
        init[1] = 0.0
    alpha = emissions[0] + Tensor(init)

    skip_ok = np.full(s, -np.inf, dtype=dtype)
    for i in range(2, s):
        if ext[i] != BLANK and ext[i] != ext[i - 2]:
            skip_ok[i] = 0.0

    pad1 = Tensor(np.full(1, -np.inf, dtype=dtype))
    pad2 = Tensor(np.full(2, -np.inf, dtype=dtype))
    blocked = Tensor(np.full(s, -np.inf, dtype=dtype))
    for t in range(1, t_total):
        stay = alpha
        step = ad.concat([pad1, alpha[:s - 1]], axis=0) if s > 1 else blocked
        if s > 2:
            skip = ad.concat([pad2, alpha[:s - 2]], axis=0) + Tensor(skip_ok)
        else:
            skip = blocked
        merged = ad.logsumexp(ad.stack([stay, step, skip], axis=0), axis=0)
        alpha = merged + emissions[t]

    finals = alpha[max(s - 2, 0):]
    return -ad.logsumexp(finals, axis=0)


class BackTranslator(BaseEstimator):
    """Pose-to-text transformer with joint CTC recognition and translation losses."""

    def __init__(self, layers=1, heads=2, embed_dim=128, ff_dim=None,
                 recognition_weight=5.0, translation_weight=1.0, learning_rate=1e-3,
                 epochs=30, max_len=30, input_noise_rate=None, seed=0, dtype="float32"):
        self.layers = layers
        self.heads = heads
        self.embed_dim = embed_dim
        self.ff_dim = ff_dim
        self.recognition_weight = recognition_weight
        self.translation_weight = translation_weight
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.max_len = max_len
        self.input_noise_rate = input_noise_rate
        self.seed = seed
        self.dtype = dtype

    def _validate_config(self):
        if self.recognition_weight < 0 or self.translation_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")

    @property
    def _ff(self):
        return self.ff_dim if self.ff_dim is not None else 4 * self.embed_dim

    def _check_fitted(self):
        if not hasattr(self, "text_vocab_"):
            raise NotFittedError("this back-translator has not been fitted yet")

    # --- graph builders ------------------------------------------------------------

    def _encode_frames(self, frames_norm: np.ndarray) -> Tensor:
        x = tf.linear(self._store, "encoder0.frame_in", Tensor(frames_norm),
                      FRAME_DIM, self.embed_dim)
        x = x + Tensor(tf.sinusoidal_positions(frames_norm.shape[0], self.embed_dim,
                                               dtype=self._store.dtype))
        return tf.encoder_stack(self._store, "encoder0", x, dim=self.embed_dim,
                                heads=self.heads, hidden=self._ff, layers=self.layers)

    def _recognition_log_probs(self, memory: Tensor) -> Tensor:
        logits = tf.linear(self._store, "recognition", memory, self.embed_dim,
                           len(self.gloss_vocab_) + 1)
        return ad.log_softmax(logits, axis=-1)

    def _decode_text(self, token_ids: np.ndarray, memory: Tensor) -> Tensor:
        table = self._store.weight("decoder.tok_embed", (len(self.text_vocab_), self.embed_dim))
        scale = Tensor(np.asarray(np.sqrt(self.embed_dim), dtype=self._store.dtype))
        x = ad.embedding(table, token_ids) * scale
        x = x + Tensor(tf.sinusoidal_positions(len(token_ids), self.embed_dim,
                                               dtype=self._store.dtype))
        hidden = tf.decoder_stack(self._store, "decoder", x, memory, dim=self.embed_dim,
                                  heads=self.heads, hidden=self._ff, layers=self.layers)
        return tf.linear(self._store, "decoder.out", hidden, self.embed_dim,
                         len(self.text_vocab_))

    def _instance_loss(self, frames_norm, gloss_ids, text_ids) -> Tensor:
        memory = self._encode_frames(frames_norm)
        parts = []
        if self.recognition_weight > 0:
            rec = ctc_loss(self._recognition_log_probs(memory), gloss_ids)
            parts.append(rec * Tensor(np.asarray(self.recognition_weight, dtype=rec.dtype)))
        if self.translation_weight > 0:
            dec_in = np.concatenate([[Vocabulary.BOS], text_ids])
            dec_target = np.concatenate([text_ids, [Vocabulary.EOS]])
            logits = self._decode_text(dec_in, memory)
            ce = ad.cross_entropy(logits, dec_target)
            parts.append(ce * Tensor(np.asarray(self.translation_weight, dtype=ce.dtype)))
        if not parts:
            raise ValueError("at least one loss weight must be positive")
        total = parts[0]
        for p in parts[1:]:
            total = total + p
        return total

    # --- estimator API ------------------------------------------------------------------

    def fit(self, frames_list, glosses, texts):
        """frames_list: raw (T, 150) arrays; glosses/texts: aligned token lists."""
        self._validate_config()
        frames_list = [np.asarray(f, dtype=np.float64) for f in frames_list]
        glosses = [list(g) for g in glosses]
        texts = [list(t) for t in texts]
        if not frames_list or not (len(frames_list) == len(glosses) == len(texts)):
            raise ValueError("fit needs aligned, non-empty frames/gloss/text lists")
        for f in frames_list:
            if f.ndim != 2 or f.shape[1] != FRAME_DIM:
                raise ValueError(f"frames must be (T, {FRAME_DIM}), got {f.shape}")

        self.gloss_vocab_ = sorted({g for seq in glosses for g in seq})
        self._gloss_index = {g: i + 1 for i, g in enumerate(self.gloss_vocab_)}
        self.text_vocab_ = Vocabulary.build(texts)

        stacked = np.concatenate(frames_list, axis=0)
        self.norm_mean_ = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        std[std == 0] = 1.0
        self.norm_std_ = std

        np_dtype = np.dtype(self.dtype)
        data = []
        for frames, gloss, text in zip(frames_list, glosses, texts):
            norm = ((frames - self.norm_mean_) / self.norm_std_).astype(np_dtype)
            gloss_ids = [self._gloss_index[g] for g in gloss]
            data.append((norm, gloss_ids, self.text_vocab_.encode(text)))

        self._store = tf.ParameterStore(self.seed, dtype=np_dtype)
        self._instance_loss(*data[0])

        opt = Adam(self._store.params, lr=self.learning_rate)
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            order = seeded_rng(self.seed, "order", epoch).permutation(len(data))
            total = 0.0
            for idx in order:
                norm, gloss_ids, text_ids = data[idx]
                if self.input_noise_rate is not None:
                    rng = seeded_rng(self.seed, "noise", epoch, int(idx))
                    norm = add_gaussian_noise(norm, self.input_noise_rate, rng=rng)
                opt.zero_grad()
                loss = self._instance_loss(norm, gloss_ids, text_ids)
                if not np.isfinite(loss.item()):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                loss.backward()
                opt.step()
                total += loss.item()
            self.loss_curve_.append(total / len(data))
        return self

    def translate(self, pose, max_len: int | None = None) -> list[str]:
        """Greedy decoding of a pose sequence (counter channel ignored)."""
        self._check_fitted()
        frames = pose.frames if isinstance(pose, PoseSequence) else np.asarray(pose)
        if frames.ndim != 2 or frames.shape[1] != FRAME_DIM:
            raise ValueError(f"poses must be (T, {FRAME_DIM}), got {frames.shape}")
        cap = max_len if max_len is not None else self.max_len
        norm = ((frames - self.norm_mean_) / self.norm_std_).astype(np.dtype(self.dtype))
        memory = self._encode_frames(norm)
        ids = [Vocabulary.BOS]
        out: list[str] = []
        for _ in range(cap):
            logits = self._decode_text(np.asarray(ids), memory)
            next_id = int(np.argmax(logits.data[-1]))
            if next_id == Vocabulary.EOS:
                break
            out.append(self.text_vocab_.token(next_id))
            ids.append(next_id)
        return out

    # --- persistence -------------------------------------------------------------------

    def _checkpoint_payload(self):
        self._check_fitted()
        return {
            "params": self.get_params(),
            "tensors": self._store.state_arrays(),
            "extra": {"gloss_vocab": self.gloss_vocab_,
                      "text_vocab": self.text_vocab_.to_list(),
                      "loss_curve": self.loss_curve_},
            "norm_stats": {"mean": self.norm_mean_.tolist(), "std": self.norm_std_.tolist()},
        }

    def _restore(self, extra, tensors, norm_stats):
        self._validate_config()
        self.gloss_vocab_ = list(extra["gloss_vocab"])
        self._gloss_index = {g: i + 1 for i, g in enumerate(self.gloss_vocab_)}
        self.text_vocab_ = Vocabulary.from_list(extra["text_vocab"])
        self.loss_curve_ = list(extra.get("loss_curve", []))
        self.norm_mean_ = np.asarray(norm_stats["mean"], dtype=np.float64)
        self.norm_std_ = np.asarray(norm_stats["std"], dtype=np.float64)
        self._store = tf.ParameterStore(self.seed, dtype=np.dtype(self.dtype))
        np_dtype = np.dtype(self.dtype)
        dummy_frames = np.zeros((2, FRAME_DIM), dtype=np_dtype)
        self._instance_loss(dummy_frames, [1] if self.gloss_vocab_ else [],
                            np.zeros(1, dtype=np.int64))
        self._store.load_arrays(tensors)

    def save(self, path):
        from intensign.checkpoint import save_checkpoint
        save_checkpoint(self, path)
