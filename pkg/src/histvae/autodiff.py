"""Dense tensors with reverse-mode automatic differentiation.

Tensors hold contiguous float32 data by default (float64 is supported for
high-precision checks). Operations executed while a Tape is active are
recorded; Tape.backward then accumulates gradients into every reachable
tracked leaf (Parameters and explicitly tracked inputs). Without an active
tape the same functions run as plain numpy, which is the fast path used
during generation.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K

_FLOAT_TYPES = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "grad", "track")

    def __init__(self, data, dtype=None, track: bool = False):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _FLOAT_TYPES else np.float32
        arr = arr.astype(dtype, copy=False)
        if not arr.flags["C_CONTIGUOUS"]:
            # note: ascontiguousarray would promote 0-d arrays to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.track = track
        self.grad = np.zeros_like(self.data) if track else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        kind = "Parameter" if isinstance(self, Parameter) else "Tensor"
        return f"{kind}(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """Learnable tensor; gradients accumulate into .grad during backward."""

    def __init__(self, data, dtype=np.float32):
        super().__init__(data, dtype=dtype, track=True)


class Tape:
    """Ordered record of primitive applications for one backward traversal.

    A tape is single-use: backward consumes it. Tapes may nest; only the
    innermost active tape records.
    """

    _active: Optional["Tape"] = None

    def __init__(self):
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._outputs: set[int] = set()
        self._consumed = False
        self._prev: Optional[Tape] = None

    def __enter__(self) -> "Tape":
        self._prev = Tape._active
        Tape._active = self
        return self

    def __exit__(self, *exc) -> None:
        Tape._active = self._prev

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], bwd) -> None:
        self._ops.append((out, inputs, bwd))
        self._outputs.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every tracked leaf on this tape."""
        if self._consumed:
            raise RuntimeError("tape already consumed by a previous backward call")
        if loss.data.shape != ():
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if id(loss) not in self._outputs:
            raise ValueError("loss was not computed under this tape")
        self._consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        for out, inputs, bwd in reversed(self._ops):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for tensor, gt in zip(inputs, bwd(g)):
                if gt is None:
                    continue
                if tensor.track:
                    tensor.grad += gt.reshape(tensor.data.shape)
                elif id(tensor) in grads:
                    grads[id(tensor)] = grads[id(tensor)] + gt
                else:
                    grads[id(tensor)] = gt


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    tape = Tape._active
    if tape is not None:
        tape._record(out, inputs, bwd)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- primitives ----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _emit(data, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit(data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return _emit(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _emit(data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _emit(a.data * np.asarray(factor, dtype=a.dtype), (a,), lambda g: (g * factor,))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _emit(data, tuple(tensors), bwd)


def _sorted_rows_total(rows: np.ndarray) -> np.ndarray:
    # accumulate in lexicographic value order: the result is independent of
    # how the rows were labeled (float addition does not commute otherwise)
    if rows.shape[0] <= 1:
        return rows.sum(axis=0)
    order = np.lexsort(rows.T[::-1])
    return rows[order].sum(axis=0)


def sum_row_groups(a: Tensor, groups: Sequence[Sequence[int]]) -> Tensor:
    """Row-group sums with label-independent accumulation order.

    out[i] = sum of a's rows listed in groups[i]; empty groups give zero
    rows. Used for neighbor aggregation so that permutation equivariance is
    exact, not merely within float noise.
    """
    width = a.data.shape[1]
    out = np.zeros((len(groups), width), dtype=a.data.dtype)
    for i, idx in enumerate(groups):
        if len(idx):
            out[i] = _sorted_rows_total(a.data[np.asarray(idx, dtype=np.intp)])

    def bwd(g):
        da = np.zeros_like(a.data)
        for i, idx in enumerate(groups):
            if len(idx):
                np.add.at(da, np.asarray(idx, dtype=np.intp), g[i])
        return (da,)

    return _emit(out, (a,), bwd)


def take_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    data = a.data[idx]

    def bwd(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _emit(data, (a,), bwd)


def tile_rows(a: Tensor, count: int) -> Tensor:
    if a.data.ndim != 2 or a.data.shape[0] != 1:
        raise ValueError(f"tile_rows expects a (1, d) tensor, got {a.shape}")
    data = np.repeat(a.data, count, axis=0)

    def bwd(g):
        return (g.sum(axis=0, keepdims=True),)

    return _emit(data, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _emit(data, (a,), bwd)


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    data = a.data.mean(axis=axis)
    if axis is None:
        size = a.data.size

        def bwd(g):
            return (np.full(a.data.shape, g / size, dtype=a.data.dtype),)

    else:
        size = a.data.shape[axis]

        def bwd(g):
            return (np.repeat(np.expand_dims(g / size, axis), size, axis=axis),)

    return _emit(data, (a,), bwd)


def sum_(a: Tensor, axis: Optional[int] = None) -> Tensor:
    data = a.data.sum(axis=axis)
    if axis is None:

        def bwd(g):
            return (np.full(a.data.shape, g, dtype=a.data.dtype),)

    else:

        def bwd(g):
            size = a.data.shape[axis]
            return (np.repeat(np.expand_dims(g, axis), size, axis=axis),)

    return _emit(data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    data = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bwd(g):
        return (g * data * (1.0 - data),)

    return _emit(data, (a,), bwd)


def tanh_(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - data * data),)

    return _emit(data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def bwd(g):
        return (g * (a.data > 0),)

    return _emit(data, (a,), bwd)


def exp_(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bwd(g):
        return (g * data,)

    return _emit(data, (a,), bwd)


def log_(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return _emit(data, (a,), bwd)


def masked_softmax(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Normalize exp(logits) over mask==1 entries of the last axis.

    The mask is a plain array (no gradient flows into it); masked entries of
    the result are exactly zero.
    """
    mask = np.asarray(mask, dtype=logits.dtype)
    if mask.shape != logits.data.shape:
        raise ValueError(f"mask shape {mask.shape} != logits shape {logits.data.shape}")
    data = K.masked_softmax_fwd(logits.data, mask)

    def bwd(g):
        return (K.masked_softmax_bwd(data, mask, g),)

    return _emit(data, (logits,), bwd)


def gru_cell(x: Tensor, h: Tensor, wx: Tensor, wh: Tensor, bx: Tensor, bh: Tensor) -> Tensor:
    """Fused GRU step; see the kernel backend for the gate equations."""
    if x.shape[0] != h.shape[0]:
        raise ValueError(f"batch mismatch: input {x.shape} vs state {h.shape}")
    if wx.shape != (x.shape[1], 3 * h.shape[1]) or wh.shape != (h.shape[1], 3 * h.shape[1]):
        raise ValueError("GRU weight shapes do not match input/state dims")
    data, cache = K.gru_cell_fwd(x.data, h.data, wx.data, wh.data, bx.data, bh.data)

    def bwd(g):
        return K.gru_cell_bwd(cache, wx.data, wh.data, g)

    return _emit(data, (x, h, wx, wh, bx, bh), bwd)


def cross_entropy(probs: Tensor, target: int) -> Tensor:
    """-log p[target] on a 1-D probability vector, with p floored at 1e-12."""
    if probs.data.ndim != 1:
        raise ValueError("cross_entropy expects a 1-D probability vector")
    if not 0 <= target < probs.data.shape[0]:
        raise IndexError(f"target {target} out of range")
    p = float(probs.data[target])
    if p == 0.0:
        raise ValueError(f"cross-entropy target {target} has zero (masked) probability")
    clamped = max(p, 1e-12)
    data = np.asarray(-math.log(clamped), dtype=probs.dtype)

    def bwd(g):
        out = np.zeros_like(probs.data)
        if p > 1e-12:
            out[target] = -g / clamped
        return (out,)

    return _emit(data, (probs,), bwd)


def gaussian_kl(mu: Tensor, log_sigma_sq: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over dims, averaged over rows."""
    if mu.shape != log_sigma_sq.shape:
        raise ValueError("mu and log_sigma_sq must share a shape")
    ones = Tensor(np.ones_like(mu.data))
    inner = sub(sub(add(mul(mu, mu), exp_(log_sigma_sq)), ones), log_sigma_sq)
    return scale(mean(sum_(inner, axis=1)), 0.5)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return total


# -- optimization ----------------------------------------------------------------


class Adam:
    """Adam with bias correction over a name->Parameter mapping."""

    def __init__(self, params: dict[str, Parameter], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for key, p in self.params.items():
            g = p.grad
            m = self._m[key]
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Parameter:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return Parameter(rng.uniform(-bound, bound, size=shape).astype(np.float32))
