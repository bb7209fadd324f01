"""Deterministic synthetic data used by tests and the ``fixture`` command."""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .graph import SignedGraph

# sign patterns of the four triangle types, edges (a->b, b->c, a->c)
TRIANGLE_PATTERNS = {
    "+++": (1, 1, 1),    # balanced
    "++-": (1, 1, -1),   # unbalanced
    "+--": (1, -1, -1),  # balanced
    "---": (-1, -1, -1),  # unbalanced
}


def two_cliques(size: int = 6, seed: int = 0) -> SignedGraph:
    """Two positive cliques of ``size`` nodes with every cross pair negative."""
    rng = np.random.default_rng(seed)
    left, right = range(size), range(size, 2 * size)
    edges, signs = [], []
    for block in (left, right):
        for i, j in combinations(block, 2):
            edges.append((i, j))
            signs.append(1)
    for i in left:
        for j in right:
            edges.append((i, j) if rng.random() < 0.5 else (j, i))
            signs.append(-1)
    return SignedGraph(2 * size, edges, signs)


def triangles(seed: int = 0) -> SignedGraph:
    """Four disjoint triangles, one per sign pattern in :data:`TRIANGLE_PATTERNS`."""
    rng = np.random.default_rng(seed)
    edges, signs = [], []
    for t, pattern in enumerate(TRIANGLE_PATTERNS.values()):
        a, b, c = 3 * t, 3 * t + 1, 3 * t + 2
        edges += [(a, b), (b, c), (a, c)]
        signs += list(pattern)
    order = rng.permutation(len(edges))
    return SignedGraph(12, [edges[i] for i in order], [signs[i] for i in order])


def channel(n: int = 10_000, eps: float = 0.0, dim: int = 4, jitter: float = 0.1,
            seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Balanced binary labels seen through a symmetric channel with flip rate ``eps``.

    Features are the (possibly flipped) label repeated over ``dim`` coordinates
    plus Gaussian jitter. ``eps = 0.5`` makes features independent of labels;
    the true mutual information is ln 2 - H(eps) nats.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n).astype(np.float64)
    flip = rng.random(n) < eps
    seen = np.where(flip, 1.0 - labels, labels)
    feats = seen[:, None] + jitter * rng.standard_normal((n, dim))
    return feats, labels


def channel_mi(eps: float) -> float:
    """ln 2 - H_b(eps) in nats."""
    if eps in (0.0, 1.0):
        return float(np.log(2.0))
    return float(np.log(2.0) + eps * np.log(eps) + (1 - eps) * np.log(1 - eps))
