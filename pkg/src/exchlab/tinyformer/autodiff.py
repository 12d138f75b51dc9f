"""Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tensor`` is a thin wrapper around an ndarray. Ops are free functions
that compute eagerly; when a ``Tape`` is active they also record the
backward rule. With no active tape the same functions act as a plain
(fast) numpy forward pass, so inference and training share one code
path.

Gradients are accumulated keyed by the ``id`` of each Tensor object; a
parameter that never touches the loss gets an exactly-zero gradient.
An optional NaN guard (``set_nan_guard``) verifies every op output is
finite, for debugging.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np
from scipy.special import erf, expit

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_MASKED_LOGIT = -1e30  # finite stand-in for -inf; exp underflows to exactly 0

_nan_guard = False


def set_nan_guard(enabled: bool) -> None:
    """Toggle per-op finiteness checking (slow; for debugging)."""
    global _nan_guard
    _nan_guard = bool(enabled)


class Tensor:
    """A float64 array plus identity for gradient accumulation."""

    __slots__ = ("data",)

    def __init__(self, data) -> None:
        self.data = np.asarray(data, dtype=np.float64)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


_tape_stack: list["Tape"] = []


class Tape:
    """Records ops while active; replays them in reverse for gradients."""

    def __init__(self) -> None:
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack.pop()
        assert popped is self

    @staticmethod
    def current() -> "Tape | None":
        return _tape_stack[-1] if _tape_stack else None

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> None:
        self._records.append((out, parents, backward))

    def gradients(self, loss: Tensor, params: Iterable[Tensor]) -> dict[int, np.ndarray]:
        """Gradient of scalar loss w.r.t. each param, keyed by id(param).

        Visits every record exactly once in reverse topological order
        (records are appended in forward execution order). Params that
        do not reach the loss get zero gradients.
        """
        if loss.data.size != 1:
            raise ValueError("loss must be a scalar")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, parents, backward in reversed(self._records):
            g = grads.get(id(out))
            if g is None:
                continue
            for parent, pg in zip(parents, backward(g)):
                if pg is None:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        return {id(p): grads.get(id(p), np.zeros_like(p.data)) for p in params}


def _result(value: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    if _nan_guard and not np.all(np.isfinite(value)):
        raise FloatingPointError("non-finite value produced by an op")
    out = Tensor(value)
    tape = Tape.current()
    if tape is not None:
        tape.record(out, parents, backward)
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Undo numpy broadcasting: reduce g back to the given shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_sum_to_shape(g, a.shape), _sum_to_shape(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_sum_to_shape(g * b.data, a.shape), _sum_to_shape(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    return _result(
        a.data / b.data,
        (a, b),
        lambda g: (
            _sum_to_shape(g / b.data, a.shape),
            _sum_to_shape(-g * a.data / b.data**2, b.shape),
        ),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def shift(a: Tensor, c) -> Tensor:
    """Add a constant scalar or array; no gradient flows into c."""
    c = np.asarray(c, dtype=np.float64)
    return _result(a.data + c, (a,), lambda g: (_sum_to_shape(g, a.shape),))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


# ---------------------------------------------------------------------------
# Linear algebra and shaping


def matmul(a: Tensor, b: Tensor) -> Tensor:
    value = np.matmul(a.data, b.data)

    def backward(g):
        ga = _sum_to_shape(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _sum_to_shape(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(value, (a, b), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def take_channel(a: Tensor, index: int) -> Tensor:
    def backward(g):
        full = np.zeros(a.shape)
        full[..., index] = g
        return (full,)

    return _result(a.data[..., index], (a,), backward)


# ---------------------------------------------------------------------------
# Nonlinearities


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis (apply masks beforehand via shift)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - inner),)

    return _result(s, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Exact-erf GELU: x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    value = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _result(value, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    value = np.logaddexp(0.0, a.data)
    return _result(value, (a,), lambda g: (g * expit(a.data),))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then apply an affine gain and bias."""
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    value = gain.data * xhat + bias.data

    def backward(g):
        dgain = _sum_to_shape(g * xhat, gain.shape)
        dbias = _sum_to_shape(g, bias.shape)
        dxhat = g * gain.data
        dx = (
            inv
            / n
            * (
                n * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
        )
        return dx, dgain, dbias

    return _result(value, (x, gain, bias), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a seeded mask. Only call while training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    factor = keep / (1.0 - rate)
    return _result(x.data * factor, (x,), lambda g: (g * factor,))


# ---------------------------------------------------------------------------
# Reductions


def weighted_mean(x: Tensor, weights) -> Tensor:
    """Scalar sum(x * w) / sum(w) for a constant weight array."""
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), x.shape)
    total = w.sum()
    if total <= 0.0:
        raise ValueError("weights must have positive sum")
    value = np.asarray((x.data * w).sum() / total)
    return _result(value, (x,), lambda g: (g * w / total,))


def masked_logits(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Push disallowed positions to an effectively -inf logit."""
    return shift(scores, np.where(mask, 0.0, _MASKED_LOGIT))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return add(matmul(x, weight), bias)
