"""Signed attention aggregation on hyperbolic manifolds.

Two branches run side by side. The positive branch gathers support from
positive neighbours, the negative branch from negative neighbours; from the
second layer on each branch also pulls the *other* branch's features through
the opposite-sign neighbours (friend-of-friend / enemy-of-friend mixing).

Edge-wise work is vectorised over the ``(src, dst)`` index lists of a
:class:`~sihg.graph.NeighborView`, so one forward pass is a fixed number of
array operations regardless of graph size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, leaky_relu, signed_softmax
from .graph import NeighborView

SOFTMAX_CLIP = 1e-7


@dataclass
class LayerState:
    hP: Tensor
    hN: Tensor


@dataclass
class AttentionRecord:
    layer: int
    branch: str  # "P" or "N"
    neighbor_sign: str  # "+" or "-"
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray


@dataclass
class AttentionMap:
    records: list[AttentionRecord] = field(default_factory=list)

    def add(self, layer, branch, sign, src, dst, weight: Tensor | np.ndarray) -> None:
        w = weight.data if isinstance(weight, Tensor) else np.asarray(weight)
        self.records.append(AttentionRecord(layer, branch, sign, src, dst, np.array(w, copy=True)))

    def __iter__(self):
        return iter(self.records)


def param_shapes(num_nodes: int, d: int, num_layers: int) -> dict[str, tuple[int, ...]]:
    """Shapes of the encoder parameters (layer index starts at 1)."""
    shapes: dict[str, tuple[int, ...]] = {"X0": (num_nodes, d)}
    for l in range(1, num_layers + 1):
        width = 2 * d if l == 1 else 3 * d
        shapes[f"W_p{l}"] = (d, width)
        shapes[f"W_n{l}"] = (d, width)
        shapes[f"a_p{l}"] = (2 * d,)
        shapes[f"a_n{l}"] = (2 * d,)
        shapes[f"W_pw{l}"] = (d, d)
        shapes[f"W_nw{l}"] = (d, d)
    return shapes


def init_params(num_nodes: int, d: int, num_layers: int, rng: np.random.Generator,
                X0: np.ndarray | None = None) -> dict[str, Tensor]:
    """Glorot-uniform weights; ``X0`` defaults to small Gaussian rows."""
    params = {}
    for name, shape in param_shapes(num_nodes, d, num_layers).items():
        if name == "X0":
            data = X0 if X0 is not None else rng.normal(scale=0.1, size=shape)
        else:
            fan_in = shape[1] if len(shape) == 2 else shape[0]
            fan_out = shape[0] if len(shape) == 2 else 1
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)
    return params


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def lift_to_manifold(X0, manifold) -> Tensor:
    """Map Euclidean feature rows onto the manifold through the origin."""
    return manifold.expmap0(X0)


def signed_softmax_F(scores, segment_ids=None, num_segments: int | None = None) -> Tensor:
    """2 * softmax(scores) - 1 within each neighbour set, clipped to (-1, 1)."""
    scores = as_tensor(scores)
    if segment_ids is None:
        segment_ids = np.zeros(scores.shape[0], dtype=np.intp)
        num_segments = 1
    return signed_softmax(scores, segment_ids, num_segments, clip=SOFTMAX_CLIP)


def attention_scores(hi, hj, a, Wq, Wk, manifold) -> Tensor:
    """Raw score leaky_relu(a . [Wq log_o(hi), Wk log_o(hj)]) for row-aligned pairs."""
    a, Wq, Wk = as_tensor(a), as_tensor(Wq), as_tensor(Wk)
    fi = manifold.logmap0(hi)
    fj = manifold.logmap0(hj)
    if fi.shape[-1] != Wq.shape[1] or fj.shape[-1] != Wk.shape[1] or a.shape[0] != Wq.shape[0] + Wk.shape[0]:
        raise ad.DimensionError("attention_scores: inconsistent parameter shapes")
    if fi.ndim == 1:
        fi, fj = ad.reshape(fi, (1, -1)), ad.reshape(fj, (1, -1))
    cat = ad.concat([fi @ Wq.T, fj @ Wk.T], axis=-1)
    return leaky_relu(cat @ a)


def _edge_scores(feat_i: Tensor, feat_j: Tensor, a: Tensor, Wq: Tensor, Wk: Tensor,
                 src: np.ndarray, dst: np.ndarray) -> Tensor:
    """Same as :func:`attention_scores` but factorised per node before gathering."""
    d = Wq.shape[0]
    left = (feat_i @ Wq.T) @ a[:d]
    right = (feat_j @ Wk.T) @ a[d:]
    return leaky_relu(left[src] + right[dst])


def _weights(scores: Tensor | None, src: np.ndarray, n: int, attention: bool) -> Tensor:
    if attention:
        return signed_softmax_F(scores, src, n)
    # uniform (mean) aggregation for ablations
    deg = np.bincount(src, minlength=n).astype(np.float64)
    return Tensor(1.0 / deg[src])


def _aggregate(weights: Tensor, feat: Tensor, src: np.ndarray, dst: np.ndarray, n: int) -> Tensor:
    if len(src) == 0:
        return Tensor(np.zeros((n, feat.shape[1])))
    msg = ad.reshape(weights, (-1, 1)) * feat[dst]
    return ad.segment_sum(msg, src, n)


def _step(manifold, base: Tensor, W: Tensor, parts: list[Tensor]) -> Tensor:
    """exp_base(P_{o->base}(leaky_relu(W [parts]))), the tangent-space update."""
    u = leaky_relu(ad.concat(parts, axis=-1) @ W.T)
    return manifold.expmap(base, manifold.ptransp0(base, u))


def first_layer(view: NeighborView, x_H: Tensor, params: dict, manifold,
                attention: bool = True, attn_map: AttentionMap | None = None) -> LayerState:
    n = view.num_nodes
    feat = manifold.logmap0(x_H)
    out = {}
    for branch, src, dst, key in (("P", view.pos_src, view.pos_dst, "p"),
                                  ("N", view.neg_src, view.neg_dst, "n")):
        W, a, Ww = params[f"W_{key}1"], params[f"a_{key}1"], params[f"W_{key}w1"]
        scores = _edge_scores(feat, feat, a, Ww, Ww, src, dst) if attention else None
        w = _weights(scores, src, n, attention)
        if attn_map is not None:
            attn_map.add(1, branch, "+" if key == "p" else "-", src, dst, w)
        agg = _aggregate(w, feat, src, dst, n)
        out[branch] = _step(manifold, x_H, W, [agg, feat])
    return LayerState(out["P"], out["N"])


def aggregate_layer(view: NeighborView, state: LayerState, params: dict, l: int, manifold,
                    attention: bool = True, attn_map: AttentionMap | None = None) -> LayerState:
    """Layer l > 1: balance-consistent mixing of both branches."""
    if l < 2:
        raise ValueError("aggregate_layer handles layers l > 1")
    n = view.num_nodes
    fP = manifold.logmap0(state.hP)
    fN = manifold.logmap0(state.hN)
    a_p, a_n = params[f"a_p{l}"], params[f"a_n{l}"]
    W_pw, W_nw = params[f"W_pw{l}"], params[f"W_nw{l}"]
    ps, pd, ns, nd = view.pos_src, view.pos_dst, view.neg_src, view.neg_dst

    def weights(fi, fj, a, Wq, Wk, src, dst):
        scores = _edge_scores(fi, fj, a, Wq, Wk, src, dst) if attention else None
        return _weights(scores, src, n, attention)

    w_pp = weights(fP, fP, a_p, W_pw, W_pw, ps, pd)  # w+_ij, P branch
    w_nn = weights(fN, fN, a_n, W_nw, W_nw, ns, nd)  # w-_ij, N branch
    w_np = weights(fN, fP, a_p, W_nw, W_pw, ps, pd)  # w+_ik, N branch
    w_pn = weights(fP, fN, a_n, W_pw, W_nw, ns, nd)  # w-_ik, P branch
    if attn_map is not None:
        attn_map.add(l, "P", "+", ps, pd, w_pp)
        attn_map.add(l, "P", "-", ns, nd, w_pn)
        attn_map.add(l, "N", "-", ns, nd, w_nn)
        attn_map.add(l, "N", "+", ps, pd, w_np)

    hatP = [_aggregate(w_pp, fP, ps, pd, n), _aggregate(w_pn, fN, ns, nd, n)]
    hatN = [_aggregate(w_nn, fN, ns, nd, n), _aggregate(w_np, fP, ps, pd, n)]
    hP = _step(manifold, state.hP, params[f"W_p{l}"], hatP + [fP])
    hN = _step(manifold, state.hN, params[f"W_n{l}"], hatN + [fN])
    return LayerState(hP, hN)


def final_embedding(state: LayerState, manifold) -> Tensor:
    """Join both branches by concatenating their origin tangents and lifting to 2d."""
    u = ad.concat([manifold.logmap0(state.hP), manifold.logmap0(state.hN)], axis=-1)
    return manifold.expmap0(u)


def encode(view: NeighborView, params: dict, manifold, num_layers: int,
           attention: bool = True, attn_map: AttentionMap | None = None) -> Tensor:
    """Full encoder: lift, L aggregation layers, final 2d embedding per node."""
    x_H = lift_to_manifold(params["X0"], manifold)
    state = first_layer(view, x_H, params, manifold, attention, attn_map)
    for l in range(2, num_layers + 1):
        state = aggregate_layer(view, state, params, l, manifold, attention, attn_map)
    return final_embedding(state, manifold)
