"""Reverse-mode automatic differentiation over dense numpy tensors.

The graph is built eagerly by the op functions below; calling
:meth:`Tensor.backward` on a scalar loss populates ``.grad`` on every
reachable tensor that requires gradients. Training code runs in float32;
``grad_check`` expects float64 inputs so finite differences stay trustworthy.

Broadcasting in binary ops is restricted to leading axes: the smaller
operand's shape must be a suffix of the larger one's (scalars always
allowed). Anything else needs an explicit reshape.
"""

from __future__ import annotations

import zlib

import numpy as np


class DimensionError(ValueError):
    """Shape mismatch between operands."""


class DivergenceError(RuntimeError):
    """Non-finite value encountered during training."""


def seeded_rng(seed: int, *key: object) -> np.random.Generator:
    """Independent generator keyed by (seed, *key); strings hash via crc32.

    Stable across processes and platforms, unlike builtin hash().
    """
    parts = [int(seed) & 0xFFFFFFFF]
    for k in key:
        if isinstance(k, str):
            parts.append(zlib.crc32(k.encode("utf-8")))
        else:
            parts.append(int(k) & 0xFFFFFFFF)
    return np.random.default_rng(parts)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        if isinstance(data, (np.ndarray, np.generic)):
            self.data = np.asarray(data)  # keep the incoming dtype
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self) -> "Tensor":
        """Constant copy sharing the same buffer; gradients stop here."""
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    def __rmul__(self, other):
        return mul(_lift(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return narrow(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def _lift(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_suffix_broadcast(a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if a.size == 1 or b.size == 1:
        return
    if len(sa) == len(sb):
        # same rank: standard elementwise with keepdims-style size-1 axes
        if all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb)):
            return
        raise DimensionError(f"shapes {sa} and {sb} do not broadcast")
    small, big = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if small != big[len(big) - len(small):]:
        raise DimensionError(f"shapes {sa} and {sb} only broadcast over leading axes")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g.reshape(shape)


# --- elementwise binary ops ----------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix_broadcast(a, b)
    out = Tensor(a.data + b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix_broadcast(a, b)
    out = Tensor(a.data - b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix_broadcast(a, b)
    out = Tensor(a.data * b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    out._backward = backward
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    out._backward = backward
    return out


# --- matmul ----------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: 2-D x 2-D, batched x 2-D, or equal-batch batched."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch dims differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            if b.ndim == 2 and gb.ndim > 2:
                gb = gb.reshape(-1, *gb.shape[-2:]).sum(axis=0)
            b._accumulate(gb)

    out._backward = backward
    return out


# --- unary nonlinearities ----------------------------------------------------

def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0), parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    out._backward = backward
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1 - y * y))

    out._backward = backward
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 1 / (1 + np.exp(-a.data))
    out = Tensor(y, parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * y * (1 - y))

    out._backward = backward
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y, parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * y)

    out._backward = backward
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    out._backward = backward
    return out


def pow_const(a: Tensor, p: float) -> Tensor:
    out = Tensor(a.data ** p, parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1))

    out._backward = backward
    return out


# --- reductions and reshaping ------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,))

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype))

    out._backward = backward
    return out


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), Tensor(np.asarray(1.0 / n, dtype=a.dtype)))


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    out._backward = backward
    return out


def transpose(a: Tensor, axes) -> Tensor:
    out = Tensor(a.data.transpose(axes), parents=(a,))
    inverse = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inverse))

    out._backward = backward
    return out


def narrow(a: Tensor, key) -> Tensor:
    out = Tensor(a.data[key], parents=(a,))

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[key] = g
            a._accumulate(full)

    out._backward = backward
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    out._backward = backward
    return out


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(np.stack([t.data for t in tensors], axis=axis), parents=tuple(tensors))

    def backward(g):
        pieces = np.split(g, len(tensors), axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(np.squeeze(piece, axis=axis))

    out._backward = backward
    return out


# --- softmax family ----------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, parents=(a,))

    def backward(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - dot))

    out._backward = backward
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = Tensor(y, parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    out._backward = backward
    return out


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    finite = np.isfinite(m)
    m = np.where(finite, m, 0.0)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    # rows that are all -inf stay -inf and get zero gradient weight
    with np.errstate(divide="ignore"):
        y = np.where(s == 0, -np.inf, np.log(np.where(s == 0, 1.0, s)) + m)
    w = e / np.where(s == 0, 1.0, s)
    if not keepdims:
        y = np.squeeze(y, axis=axis)
    out = Tensor(y, parents=(a,))

    def backward(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(g * w)

    out._backward = backward
    return out


def index_select(a: Tensor, indices, axis: int = -1) -> Tensor:
    """Gather along one axis; repeated indices accumulate gradient correctly."""
    idx = np.asarray(indices)
    out = Tensor(np.take(a.data, idx, axis=axis), parents=(a,))

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            moved = np.moveaxis(full, axis, 0)
            np.add.at(moved, idx, np.moveaxis(g, axis, 0))
            a._accumulate(full)

    out._backward = backward
    return out


# --- normalization, lookup, regularization ------------------------------------

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise DimensionError(
            f"layer_norm gain/bias {gain.shape}/{bias.shape} do not match feature dim of {x.shape}")
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, parents=(x, gain, bias))

    def backward(g):
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            x._accumulate(dx)

    out._backward = backward
    return out


def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup into a (V, D) table; gradient scatter-adds into the table."""
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.shape}")
    idx = np.asarray(indices)
    out = Tensor(table.data[idx], parents=(table,))

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            table._accumulate(full)

    out._backward = backward
    return out


def dropout(a: Tensor, p: float, rng: np.random.Generator | None = None, train: bool = True) -> Tensor:
    """Inverted dropout: scales kept activations by 1/(1-p) at train time."""
    if not train or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit generator for determinism")
    mask = (rng.random(a.shape) >= p).astype(a.dtype) / np.asarray(1.0 - p, dtype=a.dtype)
    out = Tensor(a.data * mask, parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    out._backward = backward
    return out


# --- losses ------------------------------------------------------------------

def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared residuals over every element."""
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = Tensor(np.asarray((diff * diff).mean(), dtype=pred.dtype), parents=(pred, target))
    scale = 2.0 / pred.size

    def backward(g):
        if pred.requires_grad:
            pred._accumulate((g * scale) * diff)
        if target.requires_grad:
            target._accumulate((-g * scale) * diff)

    out._backward = backward
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits)."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (N, C) logits, got {logits.shape}")
    t = np.asarray(targets)
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    out = Tensor(np.asarray(-logp[np.arange(n), t].mean(), dtype=logits.dtype), parents=(logits,))

    def backward(g):
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[np.arange(n), t] -= 1.0
            logits._accumulate((g / n) * grad)

    out._backward = backward
    return out


def straight_through(soft: Tensor, hard_data: np.ndarray) -> Tensor:
    """Forward emits hard_data verbatim; backward passes gradients to `soft`."""
    if soft.shape != hard_data.shape:
        raise DimensionError(f"straight_through shapes differ: {soft.shape} vs {hard_data.shape}")
    out = Tensor(hard_data, parents=(soft,))

    def backward(g):
        if soft.requires_grad:
            soft._accumulate(g)

    out._backward = backward
    return out


# --- initialization and optimization ------------------------------------------

def xavier_uniform(shape, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Glorot uniform in +-sqrt(6 / (fan_in + fan_out)); 2-D weights only."""
    if len(shape) != 2:
        raise DimensionError(f"xavier init needs a 2-D (fan_in, fan_out) shape, got {tuple(shape)}")
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Adam:
    """Bias-corrected Adam over a name -> Tensor parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for parameter '{name}'")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            mhat = m / (1 - self.beta1 ** t)
            vhat = v / (1 - self.beta2 ** t)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


# --- verification oracle -------------------------------------------------------

def grad_check(f, point: Tensor, h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    `f` maps the point tensor to a scalar Tensor. The point should be float64;
    relative error uses denominator max(|analytic|, |numeric|, 1e-8).
    """
    point.grad = None
    loss = f(point)
    if not np.all(np.isfinite(loss.data)):
        raise ValueError("grad_check: function value is not finite")
    loss.backward()
    analytic = np.zeros_like(point.data) if point.grad is None else point.grad.copy()

    flat = point.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(point.data)).data)
        flat[i] = orig - h
        fm = float(f(Tensor(point.data)).data)
        flat[i] = orig
        numeric[i] = (fp - fm) / (2 * h)
    numeric = numeric.reshape(point.shape)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
