"""Dynamic selection pose generator: k encoders, one decoder, per-frame mixing.

Each source view of an instance is the same gloss sequence under a different
enhancement strategy. A shared decoder produces one candidate frame per
source; a small MLP over the concatenated decoder states emits per-frame
importance coefficients (a softmax over sources). Soft mode outputs the
convex mixture; hard mode emits the argmax candidate verbatim and trains
straight-through: the reported loss is the selected output's MSE while
gradients follow the soft mixture.

With k=1 the model degenerates to the progressive transformer exactly: the
lone coefficient is 1.0 and parameter names/seeds match, so the training
loss trajectory is bit-identical.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from intensign import autodiff as ad
from intensign import transformer as tf
from intensign.autodiff import Adam, DivergenceError, Tensor, seeded_rng
from intensign.corpus import FRAME_DIM, Vocabulary
from intensign.intensify import Strategy
from intensign.ptgen import (
    POSE_DIM,
    PoseSequence,
    apply_teacher_noise,
    counter_targets,
    weighted_pose_mse,
)


def mix_soft(candidates: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Convex combination of (k, D) candidate rows under (k,) weights."""
    candidates = np.asarray(candidates)
    alpha = np.asarray(alpha)
    if candidates.shape[0] != alpha.shape[0]:
        raise ValueError(f"{candidates.shape[0]} candidates vs {alpha.shape[0]} weights")
    if not np.isclose(alpha.sum(), 1.0, atol=1e-6):
        raise ValueError("importance coefficients must sum to 1")
    return (alpha[:, None] * candidates).sum(axis=0)


def mix_hard(candidates: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """The argmax candidate, bitwise; ties break to the lowest source index."""
    candidates = np.asarray(candidates)
    alpha = np.asarray(alpha)
    if candidates.shape[0] != alpha.shape[0]:
        raise ValueError(f"{candidates.shape[0]} candidates vs {alpha.shape[0]} weights")
    return candidates[int(np.argmax(alpha))].copy()


class DynamicSelectionGenerator(BaseEstimator):
    """Multi-source gloss-to-pose generator with per-frame source selection."""

    def __init__(self, k=2, strategies=("suffixation", "end-marking"), mode="soft",
                 layers=2, heads=4, embed_dim=256, mlp_dim=256, ff_dim=None, noise_rate=5.0,
                 max_frames=200, stop_threshold=0.98, learning_rate=1e-3, epochs=40,
                 counter_loss_weight=1.0, counter_input_noise=0.0, decay_epochs=0,
                 decay_factor=0.2, seed=0, mixed_history=True, dtype="float32"):
        self.k = k
        self.strategies = strategies
        self.mode = mode
        self.layers = layers
        self.heads = heads
        self.embed_dim = embed_dim
        self.mlp_dim = mlp_dim
        self.ff_dim = ff_dim
        self.noise_rate = noise_rate
        self.max_frames = max_frames
        self.stop_threshold = stop_threshold
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.counter_loss_weight = counter_loss_weight
        self.counter_input_noise = counter_input_noise
        self.decay_epochs = decay_epochs
        self.decay_factor = decay_factor
        self.seed = seed
        self.mixed_history = mixed_history
        self.dtype = dtype

    def _validate_config(self):
        if self.k < 1:
            raise ValueError("need at least one source")
        if self.strategies is not None:
            if len(self.strategies) != self.k:
                raise ValueError(f"{len(self.strategies)} strategies for k={self.k} sources")
            for s in self.strategies:
                Strategy(s)
        if self.mode not in ("soft", "hard"):
            raise ValueError(f"mode must be 'soft' or 'hard', got {self.mode!r}")
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if not 0.0 < self.stop_threshold <= 1.0:
            raise ValueError("stop_threshold must lie in (0, 1]")

    @property
    def _ff(self):
        return self.ff_dim if self.ff_dim is not None else 4 * self.embed_dim

    def _check_fitted(self):
        if not hasattr(self, "vocabs_"):
            raise NotFittedError("this generator has not been fitted yet")

    # --- graph builders ------------------------------------------------------

    def encode_multi(self, sources) -> list[Tensor]:
        """k gloss token sequences -> k encoder memories (separate parameters)."""
        sources = list(sources)
        if len(sources) != self.k:
            raise ValueError(f"expected {self.k} source sequences, got {len(sources)}")
        return [
            tf.token_encoder(self._store, f"encoder{i}", self.vocabs_[i].encode(list(tokens)),
                             vocab_size=len(self.vocabs_[i]), dim=self.embed_dim,
                             heads=self.heads, hidden=self._ff, layers=self.layers)
            for i, tokens in enumerate(sources)
        ]

    def _decode_one(self, inputs: Tensor, memory: Tensor) -> tuple[Tensor, Tensor]:
        return tf.pose_decoder(self._store, inputs, memory, frame_dim=FRAME_DIM,
                               dim=self.embed_dim, heads=self.heads, hidden=self._ff,
                               layers=self.layers)

    def decode_multi(self, inputs: Tensor, memories: list[Tensor]):
        """Shared decoder once per source: -> (k outputs (T,151), k hiddens (T,D))."""
        outs, hiddens = [], []
        for memory in memories:
            out, hidden = self._decode_one(inputs, memory)
            outs.append(out)
            hiddens.append(hidden)
        return outs, hiddens

    def importance_coefficients(self, hiddens: list[Tensor]) -> Tensor:
        """Per-frame softmax over sources from the concatenated decoder states."""
        x = hiddens[0] if len(hiddens) == 1 else ad.concat(hiddens, axis=-1)
        h = ad.relu(tf.linear(self._store, "ic.1", x, self.k * self.embed_dim, self.mlp_dim))
        logits = tf.linear(self._store, "ic.2", h, self.mlp_dim, self.k)
        return ad.softmax(logits, axis=-1)

    def _mixed_output(self, outs: list[Tensor], alphas: Tensor, mode: str) -> Tensor:
        soft = outs[0] * alphas[:, 0:1]
        for i in range(1, self.k):
            soft = soft + outs[i] * alphas[:, i:i + 1]
        if mode == "soft":
            return soft
        picks = np.argmax(alphas.data, axis=-1)
        hard = np.stack([outs[i].data[t] for t, i in enumerate(picks)])
        return ad.straight_through(soft, hard)

    def _teacher_arrays(self, frames_norm: np.ndarray):
        t = frames_norm.shape[0]
        counters = counter_targets(t).astype(frames_norm.dtype)
        inputs = np.zeros((t, POSE_DIM), dtype=frames_norm.dtype)
        inputs[1:, :FRAME_DIM] = frames_norm[:-1]
        inputs[1:, FRAME_DIM] = counters[:-1]
        targets = np.concatenate([frames_norm, counters[:, None]], axis=1)
        return inputs, targets

    def _instance_loss(self, id_lists, inputs: np.ndarray, targets: np.ndarray,
                       mode: str) -> Tensor:
        memories = [
            tf.token_encoder(self._store, f"encoder{i}", ids, vocab_size=len(self.vocabs_[i]),
                             dim=self.embed_dim, heads=self.heads, hidden=self._ff,
                             layers=self.layers)
            for i, ids in enumerate(id_lists)
        ]
        outs, hiddens = self.decode_multi(Tensor(inputs), memories)
        alphas = self.importance_coefficients(hiddens)
        soft_loss = weighted_pose_mse(self._mixed_output(outs, alphas, "soft"),
                                      Tensor(targets), self.counter_loss_weight)
        if mode == "soft":
            return soft_loss
        # hard mode, straight-through at the loss: the reported value is the
        # argmax-selected output's MSE, gradients follow the soft mixture.
        # Backpropagating the hard residual instead starves the unselected
        # source and freezes the coefficient MLP once the selected candidate
        # converges.
        picks = np.argmax(alphas.data, axis=-1)
        hard = np.stack([outs[i].data[t] for t, i in enumerate(picks)])
        hard_loss = weighted_pose_mse(Tensor(hard), Tensor(targets),
                                      self.counter_loss_weight).item()
        return ad.straight_through(soft_loss, np.asarray(hard_loss, dtype=soft_loss.dtype))

    # --- estimator API -----------------------------------------------------------

    def fit(self, X, y):
        """X: per-instance tuples of k gloss token lists; y: raw (T, 150) frames."""
        self._validate_config()
        X = [list(sources) for sources in X]
        y = [np.asarray(f, dtype=np.float64) for f in y]
        if not X or len(X) != len(y):
            raise ValueError("fit needs aligned, non-empty source and frame lists")
        for sources in X:
            if len(sources) != self.k:
                raise ValueError(f"every instance needs {self.k} source views, got {len(sources)}")
            if any(not tokens for tokens in sources):
                raise ValueError("empty gloss sequence in a source view")

        self.vocabs_ = [Vocabulary.build([sources[i] for sources in X]) for i in range(self.k)]
        stacked = np.concatenate(y, axis=0)
        self.norm_mean_ = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        std[std == 0] = 1.0
        self.norm_std_ = std

        np_dtype = np.dtype(self.dtype)
        self._store = tf.ParameterStore(self.seed, dtype=np_dtype)
        data = []
        for sources, frames in zip(X, y):
            ids = [self.vocabs_[i].encode(sources[i]) for i in range(self.k)]
            norm = ((frames - self.norm_mean_) / self.norm_std_).astype(np_dtype)
            data.append((ids, norm))
        self._instance_loss(data[0][0], *self._teacher_arrays(data[0][1]), mode=self.mode)

        opt = Adam(self._store.params, lr=self.learning_rate)
        noisy = (self.noise_rate is not None and not np.isinf(self.noise_rate)) \
            or self.counter_input_noise > 0
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            if self.decay_epochs and epoch == max(0, self.epochs - self.decay_epochs):
                opt.lr = self.learning_rate * self.decay_factor
            order = seeded_rng(self.seed, "order", epoch).permutation(len(data))
            total = 0.0
            for idx in order:
                ids, norm = data[idx]
                inputs, targets = self._teacher_arrays(norm)
                if noisy:
                    rng = seeded_rng(self.seed, "noise", epoch, int(idx))
                    inputs = apply_teacher_noise(inputs, self.noise_rate,
                                                 self.counter_input_noise, rng)
                opt.zero_grad()
                loss = self._instance_loss(ids, inputs, targets, mode=self.mode)
                if not np.isfinite(loss.item()):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                loss.backward()
                opt.step()
                total += loss.item()
            self.loss_curve_.append(total / len(data))
        return self

    def evaluate_mse(self, X, y, mode: str | None = None) -> float:
        """Teacher-forced, noise-free mean MSE of the mixed output."""
        self._check_fitted()
        mode = mode or self.mode
        np_dtype = np.dtype(self.dtype)
        losses = []
        for sources, frames in zip(list(X), list(y)):
            ids = [self.vocabs_[i].encode(list(sources[i])) for i in range(self.k)]
            frames = np.asarray(frames, dtype=np.float64)
            norm = ((frames - self.norm_mean_) / self.norm_std_).astype(np_dtype)
            inputs, targets = self._teacher_arrays(norm)
            losses.append(self._instance_loss(ids, inputs, targets, mode=mode).item())
        return float(np.mean(losses))

    def generate(self, sources, mode: str | None = None, max_frames: int | None = None):
        """Autoregressive generation; returns (PoseSequence, (T, k) alpha trace).

        mixed_history feeds the mixed frame back to every source's history;
        with mixed_history=False each source continues its own trajectory and
        only the emitted frame is mixed.
        """
        self._check_fitted()
        mode = mode or self.mode
        cap = max_frames if max_frames is not None else self.max_frames
        memories = self.encode_multi(sources)

        np_dtype = np.dtype(self.dtype)
        zero = np.zeros(POSE_DIM, dtype=np_dtype)
        histories = [[zero]] if self.mixed_history else [[zero] for _ in range(self.k)]
        frames, counters, trace = [], [], []
        fed_back = [0.0] * (1 if self.mixed_history else self.k)
        for _ in range(cap):
            cand_rows, hidden_rows = [], []
            for i, memory in enumerate(memories):
                history = histories[0] if self.mixed_history else histories[i]
                out, hidden = self._decode_one(Tensor(np.stack(history)), memory)
                cand_rows.append(out.data[-1])
                hidden_rows.append(Tensor(hidden.data[-1:]))
            alpha = self.importance_coefficients(hidden_rows).data[0]
            candidates = np.stack(cand_rows)
            mixed = mix_hard(candidates, alpha) if mode == "hard" else mix_soft(candidates, alpha)
            frames.append(mixed[:FRAME_DIM])
            counters.append(float(mixed[FRAME_DIM]))
            trace.append(alpha)
            if counters[-1] >= self.stop_threshold:
                break
            if self.mixed_history:
                entry = mixed.copy()
                fed_back[0] = max(fed_back[0], min(max(entry[FRAME_DIM], 0.0), 1.0))
                entry[FRAME_DIM] = fed_back[0]
                histories[0].append(entry.astype(np_dtype))
            else:
                for i in range(self.k):
                    entry = cand_rows[i].copy()
                    fed_back[i] = max(fed_back[i], min(max(entry[FRAME_DIM], 0.0), 1.0))
                    entry[FRAME_DIM] = fed_back[i]
                    histories[i].append(entry.astype(np_dtype))

        raw = np.stack(frames).astype(np.float64) * self.norm_std_ + self.norm_mean_
        seq = PoseSequence(raw, np.clip(np.asarray(counters, dtype=np.float64), 0.0, 1.0))
        return seq, np.stack(trace)

    # --- persistence ----------------------------------------------------------------

    def _checkpoint_payload(self):
        self._check_fitted()
        return {
            "params": self.get_params(),
            "tensors": self._store.state_arrays(),
            "extra": {"vocabs": [v.to_list() for v in self.vocabs_],
                      "loss_curve": self.loss_curve_},
            "norm_stats": {"mean": self.norm_mean_.tolist(), "std": self.norm_std_.tolist()},
        }

    def _restore(self, extra, tensors, norm_stats):
        self._validate_config()
        self.vocabs_ = [Vocabulary.from_list(v) for v in extra["vocabs"]]
        self.loss_curve_ = list(extra.get("loss_curve", []))
        self.norm_mean_ = np.asarray(norm_stats["mean"], dtype=np.float64)
        self.norm_std_ = np.asarray(norm_stats["std"], dtype=np.float64)
        self._store = tf.ParameterStore(self.seed, dtype=np.dtype(self.dtype))
        dummy_ids = [np.zeros(1, dtype=np.int64) for _ in range(self.k)]
        dummy = np.zeros((1, POSE_DIM), dtype=np.dtype(self.dtype))
        self._instance_loss(dummy_ids, dummy, dummy, mode=self.mode)
        self._store.load_arrays(tensors)

    def save(self, path):
        from intensign.checkpoint import save_checkpoint
        save_checkpoint(self, path)
