"""Progressive transformer pose generator with counter-based decoding.

Maps a gloss token sequence to a sequence of 150-dimensional joint frames.
The decoder is autoregressive over frames; every decoded position carries an
extra progress counter trained toward (t+1)/T, and generation stops once the
predicted counter crosses the configured threshold.

Estimator flavor: construct with hyperparameters, `fit(X, y)` on token lists
and raw (T, 150) frame arrays, `generate(tokens)` afterwards. Frames are
z-scored internally; generated output comes back in original units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from intensign import autodiff as ad
from intensign import transformer as tf
from intensign.autodiff import Adam, DivergenceError, Tensor, seeded_rng
from intensign.corpus import FRAME_DIM, Vocabulary

POSE_DIM = FRAME_DIM + 1  # joints plus the progress counter


@dataclass
class PoseSequence:
    """Generated frames (original units) with per-frame counters in [0, 1]."""

    frames: np.ndarray  # (T, 150)
    counters: np.ndarray  # (T,)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.counters = np.asarray(self.counters, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != FRAME_DIM:
            raise ValueError(f"frames must be (T, {FRAME_DIM}), got {self.frames.shape}")
        if self.counters.shape != (self.frames.shape[0],):
            raise ValueError("one counter per frame required")
        if not (np.all(np.isfinite(self.frames)) and np.all(np.isfinite(self.counters))):
            raise ValueError("pose sequences must be finite")

    def __len__(self):
        return self.frames.shape[0]


def counter_targets(n_frames: int) -> np.ndarray:
    """Progress schedule c_t = (t+1)/T; strictly increasing, ends at exactly 1."""
    if n_frames < 1:
        raise ValueError("frame count must be at least 1")
    return np.arange(1, n_frames + 1, dtype=np.float64) / n_frames


def apply_teacher_noise(inputs: np.ndarray, noise_rate, counter_input_noise: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Noise the teacher-forced decoder inputs for one training step.

    Joints get the Gaussian-noise-rate treatment; the counter feedback channel
    optionally gets a small jitter (clipped back into [0, 1]) so inference-time
    predicted counters stay in distribution. Row 0, the zero start frame, keeps
    an exact zero counter.
    """
    inputs = inputs.copy()
    if noise_rate is not None and not np.isinf(noise_rate):
        inputs[:, :FRAME_DIM] = add_gaussian_noise(inputs[:, :FRAME_DIM], noise_rate, rng=rng)
    if counter_input_noise > 0 and inputs.shape[0] > 1:
        jitter = rng.standard_normal(inputs.shape[0] - 1).astype(inputs.dtype)
        inputs[1:, FRAME_DIM] += jitter * np.asarray(counter_input_noise, dtype=inputs.dtype)
        np.clip(inputs[:, FRAME_DIM], 0.0, 1.0, out=inputs[:, FRAME_DIM])
    return inputs


def weighted_pose_mse(pred: Tensor, target: Tensor, counter_weight: float = 1.0) -> Tensor:
    """MSE over joints and counter jointly; counter_weight rescales only the
    counter channel's share (1.0 reproduces the plain mean bit for bit)."""
    if counter_weight == 1.0:
        return ad.mse_loss(pred, target)
    d = pred.shape[-1]
    joints = ad.mse_loss(pred[:, :FRAME_DIM], target[:, :FRAME_DIM])
    counter = ad.mse_loss(pred[:, FRAME_DIM:], target[:, FRAME_DIM:])
    dtype = pred.dtype
    return joints * Tensor(np.asarray(FRAME_DIM / d, dtype=dtype)) \
        + counter * Tensor(np.asarray(counter_weight / d, dtype=dtype))


def add_gaussian_noise(frames: np.ndarray, noise_rate: float, std: np.ndarray | None = None,
                       rng: np.random.Generator | None = None, seed: int = 0) -> np.ndarray:
    """Add zero-mean Gaussian noise with per-dimension std = std/noise_rate.

    Operates on joint values only; callers keep counter channels out of
    `frames`. noise_rate=None (or inf) disables the noise entirely.
    """
    if noise_rate is None or np.isinf(noise_rate):
        return frames
    if noise_rate <= 0:
        raise ValueError(f"noise rate must be positive, got {noise_rate}")
    if rng is None:
        rng = seeded_rng(seed, "gaussian-noise")
    if std is None:
        std = np.ones(frames.shape[-1])
    scale = np.asarray(std, dtype=frames.dtype) / np.asarray(noise_rate, dtype=frames.dtype)
    return frames + rng.standard_normal(frames.shape).astype(frames.dtype) * scale


class ProgressiveTransformerGenerator(BaseEstimator):
    """Gloss-to-pose transformer trained with MSE over joints and counter."""

    def __init__(self, layers=2, heads=4, embed_dim=512, ff_dim=None, noise_rate=5.0,
                 max_frames=200, stop_threshold=0.98, learning_rate=1e-3, epochs=40,
                 counter_loss_weight=1.0, counter_input_noise=0.0, decay_epochs=0,
                 decay_factor=0.2, seed=0, dtype="float32"):
        self.layers = layers
        self.heads = heads
        self.embed_dim = embed_dim
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
        self.dtype = dtype

    # --- configuration ----------------------------------------------------

    def _validate_config(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.max_frames < 1:
            raise ValueError("max_frames must be at least 1")
        if not 0.0 < self.stop_threshold <= 1.0:
            raise ValueError("stop_threshold must lie in (0, 1]")
        if self.noise_rate is not None and not np.isinf(self.noise_rate) and self.noise_rate <= 0:
            raise ValueError("noise_rate must be positive (or None to disable)")
        if self.counter_loss_weight <= 0:
            raise ValueError("counter_loss_weight must be positive")
        if self.counter_input_noise < 0 or self.decay_epochs < 0 or self.decay_factor <= 0:
            raise ValueError("counter_input_noise, decay_epochs and decay_factor must be "
                             "non-negative / positive")

    @property
    def _ff(self):
        return self.ff_dim if self.ff_dim is not None else 4 * self.embed_dim

    def _check_fitted(self):
        if not hasattr(self, "vocab_"):
            raise NotFittedError("this generator has not been fitted yet")

    # --- graph builders -----------------------------------------------------

    def _encode(self, token_ids: np.ndarray) -> Tensor:
        return tf.token_encoder(self._store, "encoder0", token_ids,
                                vocab_size=len(self.vocab_), dim=self.embed_dim,
                                heads=self.heads, hidden=self._ff, layers=self.layers)

    def _decode(self, inputs: Tensor, memory: Tensor) -> tuple[Tensor, Tensor]:
        """(T, 151) teacher inputs -> ((T, 151) outputs, (T, D) hidden states)."""
        return tf.pose_decoder(self._store, inputs, memory, frame_dim=FRAME_DIM,
                               dim=self.embed_dim, heads=self.heads, hidden=self._ff,
                               layers=self.layers)

    def _teacher_arrays(self, frames_norm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Shifted decoder inputs and (joints+counter) targets for one instance."""
        t = frames_norm.shape[0]
        counters = counter_targets(t).astype(frames_norm.dtype)
        inputs = np.zeros((t, POSE_DIM), dtype=frames_norm.dtype)
        inputs[1:, :FRAME_DIM] = frames_norm[:-1]
        inputs[1:, FRAME_DIM] = counters[:-1]
        targets = np.concatenate([frames_norm, counters[:, None]], axis=1)
        return inputs, targets

    def _instance_loss(self, token_ids, inputs: np.ndarray, targets: np.ndarray) -> Tensor:
        out, _ = self._decode(Tensor(inputs), self._encode(token_ids))
        return weighted_pose_mse(out, Tensor(targets), self.counter_loss_weight)

    # --- estimator API ---------------------------------------------------------

    def fit(self, X, y):
        """X: gloss token lists; y: raw (T, 150) float frame arrays."""
        self._validate_config()
        X = list(X)
        y = [np.asarray(f, dtype=np.float64) for f in y]
        if not X or len(X) != len(y):
            raise ValueError("fit needs aligned, non-empty token and frame lists")
        for tokens, frames in zip(X, y):
            if not tokens:
                raise ValueError("empty gloss sequence")
            if frames.ndim != 2 or frames.shape[1] != FRAME_DIM or frames.shape[0] < 1:
                raise ValueError(f"frames must be (T>=1, {FRAME_DIM}), got {frames.shape}")

        self.vocab_ = Vocabulary.build(X)
        stacked = np.concatenate(y, axis=0)
        self.norm_mean_ = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        std[std == 0] = 1.0
        self.norm_std_ = std

        np_dtype = np.dtype(self.dtype)
        self._store = tf.ParameterStore(self.seed, dtype=np_dtype)
        data = []
        for tokens, frames in zip(X, y):
            norm = ((frames - self.norm_mean_) / self.norm_std_).astype(np_dtype)
            data.append((self.vocab_.encode(tokens), norm))
        # materialize every parameter once so Adam sees the full set up front
        self._instance_loss(data[0][0], *self._teacher_arrays(data[0][1]))

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
                token_ids, norm = data[idx]
                inputs, targets = self._teacher_arrays(norm)
                if noisy:
                    rng = seeded_rng(self.seed, "noise", epoch, int(idx))
                    inputs = apply_teacher_noise(inputs, self.noise_rate,
                                                 self.counter_input_noise, rng)
                opt.zero_grad()
                loss = self._instance_loss(token_ids, inputs, targets)
                if not np.isfinite(loss.item()):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                loss.backward()
                opt.step()
                total += loss.item()
            self.loss_curve_.append(total / len(data))
        return self

    def evaluate_mse(self, X, y) -> float:
        """Teacher-forced, noise-free mean MSE per instance (normalized space)."""
        self._check_fitted()
        np_dtype = np.dtype(self.dtype)
        losses = []
        for tokens, frames in zip(list(X), list(y)):
            frames = np.asarray(frames, dtype=np.float64)
            norm = ((frames - self.norm_mean_) / self.norm_std_).astype(np_dtype)
            inputs, targets = self._teacher_arrays(norm)
            losses.append(self._instance_loss(self.vocab_.encode(tokens), inputs, targets).item())
        return float(np.mean(losses))

    def decode_step(self, history: np.ndarray, memory: Tensor) -> tuple[np.ndarray, float]:
        """One decoding step: normalized (t, 151) history -> next joints + counter."""
        history = np.asarray(history)
        if history.ndim != 2 or history.shape[1] != POSE_DIM:
            raise ValueError(f"history must be (t, {POSE_DIM}), got {history.shape}")
        out, _ = self._decode(Tensor(history.astype(np.dtype(self.dtype))), memory)
        last = out.data[-1]
        return last[:FRAME_DIM].copy(), float(last[FRAME_DIM])

    def generate(self, tokens, max_frames: int | None = None,
                 gold_counter_length: int | None = None) -> PoseSequence:
        """Autoregressive generation from a zero start frame.

        Stops at the counter threshold or the frame cap. When
        gold_counter_length is given, ground-truth counters (t+1)/length feed
        the decoder inputs instead of predictions and the length is exact:
        the comparison mode for counter-guided inference.
        """
        self._check_fitted()
        if not tokens:
            raise ValueError("cannot generate from an empty gloss sequence")
        cap = max_frames if max_frames is not None else self.max_frames
        if gold_counter_length is not None:
            cap = gold_counter_length
            gold = counter_targets(gold_counter_length)
        memory = self._encode(self.vocab_.encode(list(tokens)))

        np_dtype = np.dtype(self.dtype)
        history = [np.zeros(POSE_DIM, dtype=np_dtype)]
        frames, counters = [], []
        fed_back = 0.0
        for step in range(cap):
            joints, counter = self.decode_step(np.stack(history), memory)
            frames.append(joints)
            counters.append(counter)
            if gold_counter_length is None and counter >= self.stop_threshold:
                break
            if gold_counter_length is not None:
                fed_back = gold[step]
            else:
                # feed counters back monotonically: training only ever sees
                # non-decreasing ramps on this channel
                fed_back = max(fed_back, min(max(counter, 0.0), 1.0))
            entry = np.empty(POSE_DIM, dtype=np_dtype)
            entry[:FRAME_DIM] = joints
            entry[FRAME_DIM] = fed_back
            history.append(entry)

        raw = np.stack(frames).astype(np.float64) * self.norm_std_ + self.norm_mean_
        return PoseSequence(raw, np.clip(np.asarray(counters, dtype=np.float64), 0.0, 1.0))

    # --- persistence -------------------------------------------------------------

    def _checkpoint_payload(self):
        self._check_fitted()
        return {
            "params": self.get_params(),
            "tensors": self._store.state_arrays(),
            "extra": {"vocab": self.vocab_.to_list(), "loss_curve": self.loss_curve_},
            "norm_stats": {"mean": self.norm_mean_.tolist(), "std": self.norm_std_.tolist()},
        }

    def _restore(self, extra, tensors, norm_stats):
        self._validate_config()
        self.vocab_ = Vocabulary.from_list(extra["vocab"])
        self.loss_curve_ = list(extra.get("loss_curve", []))
        self.norm_mean_ = np.asarray(norm_stats["mean"], dtype=np.float64)
        self.norm_std_ = np.asarray(norm_stats["std"], dtype=np.float64)
        self._store = tf.ParameterStore(self.seed, dtype=np.dtype(self.dtype))
        dummy_ids = np.zeros(1, dtype=np.int64)
        dummy = np.zeros((1, POSE_DIM), dtype=np.dtype(self.dtype))
        self._instance_loss(dummy_ids, dummy, dummy)
        self._store.load_arrays(tensors)

    def save(self, path):
        from intensign.checkpoint import save_checkpoint
        save_checkpoint(self, path)
