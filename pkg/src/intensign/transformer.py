"""Shared transformer machinery for the pose generators and the back-translator.

Pre-norm encoder/decoder blocks over single sequences (no batch axis), built
on the autodiff engine. Every parameter is initialized from an independent
RNG stream keyed by (seed, parameter name), so adding or removing parameters
elsewhere in a model never shifts another tensor's initial values.
"""

from __future__ import annotations

import numpy as np

from intensign import autodiff as ad
from intensign.autodiff import Tensor, seeded_rng, xavier_uniform


class ParameterStore:
    """Name -> Tensor registry with per-name seeded initialization."""

    def __init__(self, seed: int, dtype=np.float32):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}

    def weight(self, name: str, shape) -> Tensor:
        if name not in self.params:
            data = xavier_uniform(shape, seeded_rng(self.seed, "init", name), dtype=self.dtype)
            self.params[name] = Tensor(data, requires_grad=True, name=name)
        return self.params[name]

    def zeros(self, name: str, shape) -> Tensor:
        if name not in self.params:
            self.params[name] = Tensor(
                np.zeros(shape, dtype=self.dtype), requires_grad=True, name=name)
        return self.params[name]

    def ones(self, name: str, shape) -> Tensor:
        if name not in self.params:
            self.params[name] = Tensor(
                np.ones(shape, dtype=self.dtype), requires_grad=True, name=name)
        return self.params[name]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in sorted(self.params.items())}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter names differ: missing={sorted(missing)[:3]} "
                             f"extra={sorted(extra)[:3]}")
        for name, arr in arrays.items():
            if tuple(arr.shape) != self.params[name].shape:
                raise ValueError(
                    f"parameter {name}: shape {arr.shape} != expected {self.params[name].shape}")
            self.params[name].data = arr.astype(self.dtype)


def sinusoidal_positions(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(length)[:, None].astype(np.float64)
    i = np.arange(dim // 2)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2 * i / dim)
    enc = np.zeros((length, dim))
    enc[:, 0::2] = np.sin(angle)
    enc[:, 1::2] = np.cos(angle)
    return enc.astype(dtype)


def causal_mask(length: int, dtype=np.float32) -> np.ndarray:
    mask = np.triu(np.full((length, length), -1e9), k=1)
    return mask.astype(dtype)


def linear(store: ParameterStore, name: str, x: Tensor, in_dim: int, out_dim: int) -> Tensor:
    w = store.weight(f"{name}.w", (in_dim, out_dim))
    b = store.zeros(f"{name}.b", (out_dim,))
    return x @ w + b


def _split_heads(x: Tensor, heads: int) -> Tensor:
    t, d = x.shape
    return ad.transpose(ad.reshape(x, (t, heads, d // heads)), (1, 0, 2))


def _merge_heads(x: Tensor) -> Tensor:
    h, t, dh = x.shape
    return ad.reshape(ad.transpose(x, (1, 0, 2)), (t, h * dh))


def multi_head_attention(store: ParameterStore, name: str, query: Tensor,
                         memory: Tensor | None, dim: int, heads: int,
                         mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention, (T_q, D) x (T_m, D) -> (T_q, D).

    memory=None means self-attention over the query sequence.
    """
    if memory is None:
        memory = query
    q = _split_heads(linear(store, f"{name}.q", query, dim, dim), heads)
    k = _split_heads(linear(store, f"{name}.k", memory, dim, dim), heads)
    v = _split_heads(linear(store, f"{name}.v", memory, dim, dim), heads)
    scale = np.asarray(1.0 / np.sqrt(dim // heads), dtype=store.dtype)
    scores = (q @ ad.transpose(k, (0, 2, 1))) * Tensor(scale)
    if mask is not None:
        scores = scores + Tensor(mask)
    attended = ad.softmax(scores, axis=-1) @ v
    return linear(store, f"{name}.out", _merge_heads(attended), dim, dim)


def feed_forward(store: ParameterStore, name: str, x: Tensor, dim: int, hidden: int) -> Tensor:
    return linear(store, f"{name}.2", ad.relu(linear(store, f"{name}.1", x, dim, hidden)), hidden, dim)


def _ln(store: ParameterStore, name: str, x: Tensor, dim: int) -> Tensor:
    return ad.layer_norm(x, store.ones(f"{name}.g", (dim,)), store.zeros(f"{name}.b", (dim,)))


def encoder_stack(store: ParameterStore, prefix: str, x: Tensor, *, dim: int, heads: int,
                  hidden: int, layers: int) -> Tensor:
    for i in range(layers):
        base = f"{prefix}.layers.{i}"
        x = x + multi_head_attention(store, f"{base}.attn",
                                     _ln(store, f"{base}.attn_ln", x, dim), None, dim, heads)
        x = x + feed_forward(store, f"{base}.ff", _ln(store, f"{base}.ff_ln", x, dim), dim, hidden)
    return _ln(store, f"{prefix}.final_ln", x, dim)


def decoder_stack(store: ParameterStore, prefix: str, x: Tensor, memory: Tensor, *, dim: int,
                  heads: int, hidden: int, layers: int) -> Tensor:
    """Masked self-attention + cross-attention decoder; returns hidden states."""
    mask = causal_mask(x.shape[0], dtype=store.dtype)
    for i in range(layers):
        base = f"{prefix}.layers.{i}"
        normed = _ln(store, f"{base}.attn_ln", x, dim)
        x = x + multi_head_attention(store, f"{base}.attn", normed, None, dim, heads, mask=mask)
        normed = _ln(store, f"{base}.cross_ln", x, dim)
        x = x + multi_head_attention(store, f"{base}.cross", normed, memory, dim, heads)
        x = x + feed_forward(store, f"{base}.ff", _ln(store, f"{base}.ff_ln", x, dim), dim, hidden)
    return _ln(store, f"{prefix}.final_ln", x, dim)


def token_encoder(store: ParameterStore, prefix: str, token_ids: np.ndarray, *, vocab_size: int,
                  dim: int, heads: int, hidden: int, layers: int) -> Tensor:
    """Embed token ids (scaled, plus sinusoidal positions) and run the encoder."""
    table = store.weight(f"{prefix}.tok_embed", (vocab_size, dim))
    x = ad.embedding(table, token_ids) * Tensor(np.asarray(np.sqrt(dim), dtype=store.dtype))
    x = x + Tensor(sinusoidal_positions(len(token_ids), dim, dtype=store.dtype))
    return encoder_stack(store, prefix, x, dim=dim, heads=heads, hidden=hidden, layers=layers)


def pose_decoder(store: ParameterStore, inputs: Tensor, memory: Tensor, *, frame_dim: int,
                 dim: int, heads: int, hidden: int, layers: int) -> tuple[Tensor, Tensor]:
    """Counter-conditioned pose decoder shared by the generator variants.

    inputs: (T, frame_dim + 1) teacher-forced joints plus counter channel.
    Returns ((T, frame_dim + 1) predictions, (T, dim) final hidden states).
    The counter embedding stands in for positional encodings.
    """
    joints = inputs[:, :frame_dim]
    counters = inputs[:, frame_dim:]
    x = linear(store, "decoder.frame_in", joints, frame_dim, dim) \
        + linear(store, "decoder.counter_in", counters, 1, dim)
    hidden_states = decoder_stack(store, "decoder", x, memory, dim=dim, heads=heads,
                                  hidden=hidden, layers=layers)
    out = linear(store, "decoder.out", hidden_states, dim, frame_dim + 1)
    return out, hidden_states
