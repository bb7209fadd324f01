"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Operations on :class:`Tensor` objects are recorded on the active :class:`Tape`
whenever at least one input is traced (a parameter, or the output of a
recorded op). :func:`backward` replays the tape in reverse recording order.

Example:
    >>> w = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    >>> tape.backward(loss, [w])[0]
    array([2., 4.])
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

EPS = 1e-15
LEAKY_SLOPE = 0.01

__all__ = [
    "Tensor", "Tape", "DimensionError", "TapeStateError", "backward", "as_tensor",
    "matmul", "add", "tsum", "transpose", "reshape", "sub", "mul", "div", "scale", "concat", "take", "segment_sum",
    "exp", "log", "tanh", "arctanh", "cosh", "sinh", "arcosh", "arcsinh", "sqrt",
    "square", "norm", "leaky_relu", "sigmoid", "relu", "clamp", "minkowski_inner",
    "signed_softmax", "segment_max",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class TapeStateError(RuntimeError):
    """Raised when backward is requested on an untraced or foreign value."""


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array with an optional trace on a tape."""

    __slots__ = ("data", "requires_grad", "_tape", "name", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def traced(self) -> bool:
        return self.requires_grad or self._tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, traced={self.traced})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return scale(tsum(self, axis=axis, keepdims=keepdims), 1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive operations for one forward/backward pass.

    A tape is single-writer. Use it as a context manager to make it the active
    recorder for the current thread.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        """Drop recorded nodes, breaking the tape <-> tensor reference cycle."""
        for out, _, _ in self.nodes:
            out._tape = None
        self.nodes.clear()

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable) -> None:
        out._tape = self
        self.nodes.append((out, parents, backward_fn))

    def backward(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        """Return d(loss)/d(param) for every param, zeros where unreachable."""
        if loss.data.size != 1:
            raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeStateError("loss was not produced by a forward pass on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, parents, fn in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or not parent.traced:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def backward(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to ``params``."""
    if loss._tape is None:
        raise TapeStateError("backward called on a value with no recorded forward pass")
    return loss._tape.backward(loss, params)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward_fn: Callable) -> Tensor:
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out._tape = None
    out.name = None
    if any(p.traced for p in parents):
        tape = _active_tape()
        if tape is not None:
            tape.record(out, parents, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------------------
# binary arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    """Elementwise a / b with the denominator magnitude floored at 1e-15."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    den = np.where(np.abs(b.data) < EPS, np.where(b.data < 0, -EPS, EPS), b.data)
    out = a.data / den

    def bw(g):
        ga = g / den
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), bw)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), bw)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(a, index) -> Tensor:
    """Basic slicing or integer-array gathering; the backward scatters additively."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data.astype(np.intp)
    try:
        out = a.data[index]
    except IndexError as exc:
        raise DimensionError(f"take: {exc}") from None

    fancy = _is_fancy(index)

    def bw(g):
        if _is_row_index(index):
            return (scatter_rows(index, g, a.shape[0]),)
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _make(np.array(out, copy=True), (a,), bw)


def _is_row_index(index) -> bool:
    return isinstance(index, np.ndarray) and index.ndim == 1 and index.dtype.kind in "iu"


def scatter_rows(ids: np.ndarray, values: np.ndarray, num_rows: int) -> np.ndarray:
    """out[ids[k]] += values[k], done as a sparse product (much faster than ufunc.at)."""
    ids = np.asarray(ids, dtype=np.intp)
    if len(ids) and ids.min() < 0:
        ids = ids % num_rows
    if values.ndim == 1:
        return np.bincount(ids, weights=values, minlength=num_rows).astype(np.float64)
    n = len(ids)
    sel = sparse.csr_matrix((np.ones(n), (ids, np.arange(n))), shape=(num_rows, n))
    flat = values.reshape(n, -1)
    return np.asarray(sel @ flat).reshape((num_rows,) + values.shape[1:])


def _is_fancy(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (np.ndarray, list)) for p in parts)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), bw)


def segment_sum(a, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets given by ``segment_ids``."""
    a = as_tensor(a)
    segment_ids = np.asarray(segment_ids, dtype=np.intp)
    if segment_ids.shape[0] != a.shape[0]:
        raise DimensionError(f"segment_sum: {segment_ids.shape[0]} ids for {a.shape[0]} rows")
    out = scatter_rows(segment_ids, a.data, num_segments)
    return _make(out, (a,), lambda g: (g[segment_ids],))


def segment_max(values: np.ndarray, segment_ids: np.ndarray, num_segments: int) -> np.ndarray:
    out = np.full(num_segments, -np.inf)
    np.maximum.at(out, segment_ids, values)
    return out


# ---------------------------------------------------------------------------
# elementwise functions
# ---------------------------------------------------------------------------

def _unary(a, fwd, dfn) -> Tensor:
    a = as_tensor(a)
    out = fwd(a.data)
    return _make(out, (a,), lambda g: (g * dfn(a.data, out),))


def exp(a) -> Tensor:
    return _unary(a, np.exp, lambda x, y: y)


def log(a) -> Tensor:
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def tanh(a) -> Tensor:
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def arctanh(a) -> Tensor:
    return _unary(a, np.arctanh, lambda x, y: 1.0 / (1.0 - x * x))


def cosh(a) -> Tensor:
    return _unary(a, np.cosh, lambda x, y: np.sinh(x))


def sinh(a) -> Tensor:
    return _unary(a, np.sinh, lambda x, y: np.cosh(x))


def arcosh(a) -> Tensor:
    # derivative guarded at x = 1 where it is unbounded
    return _unary(a, np.arccosh, lambda x, y: 1.0 / np.sqrt(np.maximum(x * x - 1.0, EPS)))


def arcsinh(a) -> Tensor:
    return _unary(a, np.arcsinh, lambda x, y: 1.0 / np.sqrt(x * x + 1.0))


def sqrt(a) -> Tensor:
    return _unary(a, np.sqrt, lambda x, y: 0.5 / np.maximum(y, EPS))


def square(a) -> Tensor:
    return _unary(a, np.square, lambda x, y: 2.0 * x)


def _stable_sigmoid(x):
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a) -> Tensor:
    return _unary(a, _stable_sigmoid, lambda x, y: y * (1.0 - y))


def softplus(a) -> Tensor:
    """log(1 + e^x) without overflow."""
    return _unary(a, lambda x: np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))),
                  lambda x, y: _stable_sigmoid(x))


def relu(a) -> Tensor:
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64))


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    # max(x, slope * x) equals the leaky branch selection for 0 <= slope < 1
    return _unary(a, lambda x: np.maximum(x, slope * x),
                  lambda x, y: (x > 0) * (1.0 - slope) + slope)


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip into [lo, hi]; zero gradient wherever the clip is active."""
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    return _unary(a, lambda x: np.clip(x, lo_, hi_),
                  lambda x, y: ((x >= lo_) & (x <= hi_)).astype(np.float64))


def norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm sqrt(sum x^2 + 1e-15) along ``axis``."""
    a = as_tensor(a)
    out = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True) + EPS)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * a.data / out,)

    return _make(out if keepdims else np.squeeze(out, axis=axis), (a,), bw)


def minkowski_inner(x, y, keepdims: bool = False) -> Tensor:
    """-x0*y0 + sum_{i>=1} xi*yi along the last axis."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape[-1] != y.shape[-1]:
        raise DimensionError(f"minkowski_inner: lengths {x.shape[-1]} and {y.shape[-1]} differ")
    _check_broadcast(x.data, y.data, "minkowski_inner")
    sign = np.ones(x.shape[-1])
    sign[0] = -1.0
    out = np.sum(x.data * y.data * sign, axis=-1, keepdims=True)

    def bw(g):
        if not keepdims:
            g = g[..., None]
        return _unbroadcast(g * y.data * sign, x.shape), _unbroadcast(g * x.data * sign, y.shape)

    return _make(out if keepdims else out[..., 0], (x, y), bw)


def signed_softmax(scores, segment_ids: np.ndarray, num_segments: int,
                   clip: float = 1e-7) -> Tensor:
    """Signed normalisation 2 * softmax - 1 within each segment, clipped to (-1, 1).

    Max-subtraction keeps the exponentials finite. Segments of size one map to
    ``1 - clip``.
    """
    scores = as_tensor(scores)
    if scores.ndim != 1:
        raise DimensionError("signed_softmax expects a flat score vector")
    segment_ids = np.asarray(segment_ids, dtype=np.intp)
    if scores.shape[0] == 0:
        return _make(np.zeros(0), (scores,), lambda g: (np.zeros(0),))
    shift = segment_max(scores.data, segment_ids, num_segments)[segment_ids]
    e = np.exp(scores.data - shift)
    denom = np.bincount(segment_ids, weights=e, minlength=num_segments)[segment_ids]
    soft = e / denom
    raw = 2.0 * soft - 1.0
    out = np.clip(raw, -1.0 + clip, 1.0 - clip)
    active = (raw >= -1.0 + clip) & (raw <= 1.0 - clip)

    def bw(g):
        gs = 2.0 * g * active
        inner = np.bincount(segment_ids, weights=gs * soft, minlength=num_segments)[segment_ids]
        return (soft * (gs - inner),)

    return _make(out, (scores,), bw)
