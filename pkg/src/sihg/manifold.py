"""Hyperboloid, Poincare-ball and flat geometry over autodiff tensors.

Points are stored row-wise. A ``d``-dimensional feature lives in the ``d``
spatial coordinates of a ``(d+1)``-vector on the hyperboloid and directly as a
``d``-vector in the ball. ``expmap0``/``logmap0`` work with these ``d``-vector
features, i.e. tangent vectors at the origin without the zero time coordinate.

All maps re-project their output so manifold invariants hold after every call.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, minkowski_inner

MODELS = ("hyperboloid", "poincare", "euclidean")
BALL_EPS = 1e-5
MAX_TANGENT_NORM = 40.0  # cosh/sinh overflow guard, in units of sqrt(K)


class NumericError(ArithmeticError):
    """Raised on non-finite inputs or singular hyperbolic operations."""


def _finite(*tensors: Tensor, op: str) -> None:
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"{op}: non-finite input")


def _spatial(x: Tensor) -> Tensor:
    return x[..., 1:]


def _time(x: Tensor) -> Tensor:
    return x[..., :1]


def _zeros_col(u: Tensor) -> Tensor:
    return Tensor(np.zeros(u.shape[:-1] + (1,)))


class Hyperboloid:
    """The sheet {x : <x, x>_L = -K, x0 > 0} of Minkowski space."""

    name = "hyperboloid"

    def __init__(self, K: float = 1.0):
        if not K > 0:
            raise ValueError(f"curvature parameter K must be positive, got {K}")
        self.K = float(K)
        self.sqrtK = math.sqrt(self.K)

    def ambient_dim(self, d: int) -> int:
        return d + 1

    def origin(self, d: int) -> np.ndarray:
        o = np.zeros(d + 1)
        o[0] = self.sqrtK
        return o

    def proj(self, x) -> Tensor:
        """Recompute the time coordinate from the spatial part."""
        x = as_tensor(x)
        xs = _spatial(x)
        x0 = ad.sqrt(ad.tsum(ad.square(xs), axis=-1, keepdims=True) + self.K)
        return ad.concat([x0, xs], axis=-1)

    def proj_tan(self, x, v) -> Tensor:
        x, v = as_tensor(x), as_tensor(v)
        return v + minkowski_inner(x, v, keepdims=True) * x / self.K

    def tangent_norm(self, x, v) -> Tensor:
        vv = ad.clamp(minkowski_inner(v, v, keepdims=True), lo=0.0)
        return ad.sqrt(vv)[..., 0]

    def expmap(self, x, v) -> Tensor:
        x, v = as_tensor(x), as_tensor(v)
        _finite(x, v, op="expmap")
        n = ad.sqrt(ad.clamp(minkowski_inner(v, v, keepdims=True), lo=0.0) + ad.EPS)
        r = ad.clamp(n / self.sqrtK, hi=MAX_TANGENT_NORM)
        out = ad.cosh(r) * x + self.sqrtK * ad.sinh(r) * v / n
        return self.proj(out)

    def logmap(self, x, y) -> Tensor:
        x, y = as_tensor(x), as_tensor(y)
        xy = minkowski_inner(x, y, keepdims=True)
        d = self._chord_dist(x, y, keepdims=True)
        u = y + xy * x / self.K
        un = ad.sqrt(ad.clamp(minkowski_inner(u, u, keepdims=True), lo=0.0) + ad.EPS)
        return self.proj_tan(x, d * u / un)

    def _chord_dist(self, x, y, keepdims: bool = False) -> Tensor:
        # <x-y, x-y>_L = 4K sinh^2(d / 2sqrt(K)); unlike arcosh(-<x,y>_L / K)
        # this stays accurate for nearby points and is exactly 0 at x = y
        diff = x - y
        chord2 = ad.clamp(minkowski_inner(diff, diff, keepdims=keepdims), lo=0.0)
        return 2.0 * self.sqrtK * ad.arcsinh(ad.sqrt(chord2) / (2.0 * self.sqrtK))

    def dist(self, x, y) -> Tensor:
        x, y = as_tensor(x), as_tensor(y)
        _finite(x, y, op="dist")
        return self._chord_dist(x, y)

    def expmap0(self, u) -> Tensor:
        u = as_tensor(u)
        _finite(u, op="expmap0")
        n = ad.norm(u, keepdims=True)
        r = ad.clamp(n / self.sqrtK, hi=MAX_TANGENT_NORM)
        xs = self.sqrtK * ad.sinh(r) * u / n
        return self.proj(ad.concat([_zeros_col(xs), xs], axis=-1))

    def logmap0(self, x) -> Tensor:
        xs = _spatial(as_tensor(x))
        n = ad.norm(xs, keepdims=True)
        return self.sqrtK * ad.arcsinh(n / self.sqrtK) * xs / n

    def ptransp0(self, x, u) -> Tensor:
        """Parallel transport of the origin tangent (0, u) to x."""
        x, u = as_tensor(x), as_tensor(u)
        v = ad.concat([_zeros_col(u), u], axis=-1)
        xv = ad.tsum(_spatial(x) * u, axis=-1, keepdims=True)
        coef = xv / (self.K + self.sqrtK * _time(x))
        o = Tensor(self.origin(u.shape[-1]))
        return self.proj_tan(x, v + coef * (o + x))

    def tangent_from_feature(self, u) -> Tensor:
        u = as_tensor(u)
        return ad.concat([_zeros_col(u), u], axis=-1)

    def to_poincare(self, x) -> Tensor:
        x = as_tensor(x)
        return self.sqrtK * _spatial(x) / (_time(x) + self.sqrtK)

    def from_poincare(self, p) -> Tensor:
        p = as_tensor(p)
        sq = ad.tsum(ad.square(p), axis=-1, keepdims=True)
        den = self.K - sq
        x0 = self.sqrtK * (self.K + sq) / den
        xs = 2.0 * self.K * p / den
        return self.proj(ad.concat([x0, xs], axis=-1))

    def check_point(self, x, tol: float = 1e-8) -> bool:
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        inner = -x[..., 0] ** 2 + np.sum(x[..., 1:] ** 2, axis=-1)
        return bool(np.all(np.abs(inner + self.K) <= tol * max(1.0, self.K)) and np.all(x[..., 0] > 0))


class PoincareBall:
    """The open ball of radius sqrt(K) with the conformal hyperbolic metric."""

    name = "poincare"

    def __init__(self, K: float = 1.0):
        if not K > 0:
            raise ValueError(f"curvature parameter K must be positive, got {K}")
        self.K = float(K)
        self.sqrtK = math.sqrt(self.K)
        self.max_norm = self.sqrtK * (1.0 - BALL_EPS)

    def ambient_dim(self, d: int) -> int:
        return d

    def origin(self, d: int) -> np.ndarray:
        return np.zeros(d)

    def proj(self, x) -> Tensor:
        """Pull points back inside the ball of radius sqrt(K)(1 - 1e-5)."""
        x = as_tensor(x)
        n = ad.sqrt(ad.tsum(ad.square(x), axis=-1, keepdims=True))
        return x * (self.max_norm / ad.clamp(n, lo=self.max_norm))

    def proj_tan(self, x, v) -> Tensor:
        return as_tensor(v)

    def lambda_x(self, x) -> Tensor:
        x = as_tensor(x)
        return 2.0 / (1.0 - ad.tsum(ad.square(x), axis=-1, keepdims=True) / self.K)

    def tangent_norm(self, x, v) -> Tensor:
        v = as_tensor(v)
        n = ad.sqrt(ad.tsum(ad.square(v), axis=-1, keepdims=True))
        return (self.lambda_x(x) * n)[..., 0]

    def mobius_add(self, x, y) -> Tensor:
        x, y = as_tensor(x), as_tensor(y)
        xy = ad.tsum(x * y, axis=-1, keepdims=True)
        x2 = ad.tsum(ad.square(x), axis=-1, keepdims=True)
        y2 = ad.tsum(ad.square(y), axis=-1, keepdims=True)
        num = (1.0 + 2.0 / self.K * xy + y2 / self.K) * x + (1.0 - x2 / self.K) * y
        den = 1.0 + 2.0 / self.K * xy + x2 * y2 / self.K ** 2
        if np.any(np.abs(den.data) < ad.EPS):
            raise NumericError("mobius_add: vanishing denominator")
        return num / den

    def expmap(self, x, v) -> Tensor:
        x, v = as_tensor(x), as_tensor(v)
        _finite(x, v, op="expmap")
        vn = ad.norm(v, keepdims=True)
        step = ad.tanh(self.lambda_x(x) * vn / (2.0 * self.sqrtK)) * self.sqrtK * v / vn
        return self.proj(self.mobius_add(x, step))

    def logmap(self, x, y) -> Tensor:
        x, y = as_tensor(x), as_tensor(y)
        sub = self.mobius_add(-x, y)
        sn = ad.norm(sub, keepdims=True)
        scale = 2.0 * self.sqrtK / self.lambda_x(x)
        return scale * ad.arctanh(ad.clamp(sn / self.sqrtK, hi=1.0 - BALL_EPS)) * sub / sn

    def dist(self, x, y) -> Tensor:
        x, y = as_tensor(x), as_tensor(y)
        _finite(x, y, op="dist")
        sub = self.mobius_add(-x, y)
        sn = ad.sqrt(ad.tsum(ad.square(sub), axis=-1))
        return 2.0 * self.sqrtK * ad.arctanh(ad.clamp(sn / self.sqrtK, hi=1.0 - BALL_EPS))

    def expmap0(self, u) -> Tensor:
        u = as_tensor(u)
        _finite(u, op="expmap0")
        n = ad.norm(u, keepdims=True)
        return self.proj(ad.tanh(n / self.sqrtK) * self.sqrtK * u / n)

    def logmap0(self, x) -> Tensor:
        x = as_tensor(x)
        n = ad.norm(x, keepdims=True)
        return self.sqrtK * ad.arctanh(ad.clamp(n / self.sqrtK, hi=1.0 - BALL_EPS)) * x / n

    def ptransp0(self, x, u) -> Tensor:
        x, u = as_tensor(x), as_tensor(u)
        return (1.0 - ad.tsum(ad.square(x), axis=-1, keepdims=True) / self.K) * u

    def tangent_from_feature(self, u) -> Tensor:
        return as_tensor(u)

    def check_point(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        return bool(np.all(np.linalg.norm(x, axis=-1) < self.sqrtK))


class Euclidean:
    """Flat space: exp/log degenerate to vector addition and subtraction."""

    name = "euclidean"

    def __init__(self, K: float = 1.0):
        self.K = float(K)

    def ambient_dim(self, d: int) -> int:
        return d

    def origin(self, d: int) -> np.ndarray:
        return np.zeros(d)

    def proj(self, x) -> Tensor:
        return as_tensor(x)

    def proj_tan(self, x, v) -> Tensor:
        return as_tensor(v)

    def tangent_norm(self, x, v) -> Tensor:
        v = as_tensor(v)
        return ad.sqrt(ad.tsum(ad.square(v), axis=-1))

    def expmap(self, x, v) -> Tensor:
        return as_tensor(x) + v

    def logmap(self, x, y) -> Tensor:
        return as_tensor(y) - x

    def dist(self, x, y) -> Tensor:
        return ad.sqrt(ad.tsum(ad.square(as_tensor(x) - y), axis=-1))

    def expmap0(self, u) -> Tensor:
        return as_tensor(u)

    def logmap0(self, x) -> Tensor:
        return as_tensor(x)

    def ptransp0(self, x, u) -> Tensor:
        return as_tensor(u)

    def tangent_from_feature(self, u) -> Tensor:
        return as_tensor(u)

    def check_point(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        return bool(np.all(np.isfinite(x)))


def get_manifold(model: str, K: float = 1.0):
    try:
        cls = {"hyperboloid": Hyperboloid, "poincare": PoincareBall, "euclidean": Euclidean}[model]
    except KeyError:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}") from None
    return cls(K)


# functional facade ----------------------------------------------------------

def exp_map(base, v, model: str = "hyperboloid", K: float = 1.0) -> Tensor:
    return get_manifold(model, K).expmap(base, v)


def log_map(base, y, model: str = "hyperboloid", K: float = 1.0) -> Tensor:
    return get_manifold(model, K).logmap(base, y)


def dist(x, y, model: str = "hyperboloid", K: float = 1.0) -> Tensor:
    return get_manifold(model, K).dist(x, y)


def mobius_add(x, y, K: float = 1.0) -> Tensor:
    return PoincareBall(K).mobius_add(x, y)


def parallel_transport_from_origin(b, x, model: str = "hyperboloid", K: float = 1.0) -> Tensor:
    """Move the origin tangent with feature coordinates ``b`` to the tangent space at ``x``."""
    return get_manifold(model, K).ptransp0(x, b)


def hyperbolic_linear(x, W, b, model: str = "hyperboloid", K: float = 1.0) -> Tensor:
    """exp_o(W log_o(x)) followed by the bias step exp_x'(P_{o->x'}(b))."""
    m = get_manifold(model, K)
    W, b = as_tensor(W), as_tensor(b)
    feat = m.logmap0(x)
    if W.ndim != 2 or W.shape[1] != feat.shape[-1] or W.shape[0] != b.shape[-1]:
        raise ad.DimensionError(
            f"hyperbolic_linear: W {W.shape}, bias {b.shape}, feature dim {feat.shape[-1]}")
    moved = m.expmap0(feat @ W.T if feat.ndim == 2 else ad.matmul(W, feat))
    return m.expmap(moved, m.ptransp0(moved, b))


def to_poincare(x, K: float = 1.0) -> Tensor:
    return Hyperboloid(K).to_poincare(x)


def to_hyperboloid(p, K: float = 1.0) -> Tensor:
    return Hyperboloid(K).from_poincare(p)
