"""Signed edge lists: loading, canonicalisation, splitting and neutral sampling."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

_SEPARATORS = {",": ",", "\t": "\t"}


class GraphFormatError(ValueError):
    """A line of an edge-list file could not be parsed."""

    def __init__(self, path, lineno: int, line: str, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}: {line.strip()!r}")
        self.path = str(path)
        self.lineno = lineno


class ZeroWeightError(GraphFormatError):
    """An edge carried weight 0, which has no sign."""


class SplitConfigError(ValueError):
    pass


class SamplingError(RuntimeError):
    """The anchor is connected to every other node."""


@dataclass(frozen=True, eq=False)
class NeighborView:
    """Symmetrised positive/negative adjacency built from a set of directed edges.

    ``pos_src``/``pos_dst`` (and the negative pair) list every ordered pair
    (i, j) with j in N+(i), sorted by ``i``. A pair that appears with both
    signs takes the sign of the later edge.
    """

    num_nodes: int
    pos_src: np.ndarray
    pos_dst: np.ndarray
    neg_src: np.ndarray
    neg_dst: np.ndarray

    @classmethod
    def from_edges(cls, num_nodes: int, edges: np.ndarray, signs: np.ndarray) -> "NeighborView":
        lo = np.minimum(edges[:, 0], edges[:, 1]).astype(np.int64)
        hi = np.maximum(edges[:, 0], edges[:, 1]).astype(np.int64)
        key = lo * num_nodes + hi
        # last occurrence wins: unique over the reversed order
        _, rev_first = np.unique(key[::-1], return_index=True)
        keep = len(key) - 1 - rev_first
        keep.sort()
        lo, hi, s = lo[keep], hi[keep], signs[keep]

        def sym(mask):
            src = np.concatenate([lo[mask], hi[mask]])
            dst = np.concatenate([hi[mask], lo[mask]])
            order = np.lexsort((dst, src))
            return src[order], dst[order]

        ps, pd = sym(s > 0)
        ns, nd = sym(s < 0)
        return cls(num_nodes, ps, pd, ns, nd)

    def _lists(self, src, dst) -> list[np.ndarray]:
        bounds = np.searchsorted(src, np.arange(self.num_nodes + 1))
        return [dst[bounds[i]:bounds[i + 1]] for i in range(self.num_nodes)]

    @cached_property
    def pos_neighbors(self) -> list[np.ndarray]:
        return self._lists(self.pos_src, self.pos_dst)

    @cached_property
    def neg_neighbors(self) -> list[np.ndarray]:
        return self._lists(self.neg_src, self.neg_dst)

    @cached_property
    def _adjacency_keys(self) -> np.ndarray:
        n = self.num_nodes
        src = np.concatenate([self.pos_src, self.neg_src, np.arange(n)]).astype(np.int64)
        dst = np.concatenate([self.pos_dst, self.neg_dst, np.arange(n)]).astype(np.int64)
        return np.unique(src * n + dst)

    @cached_property
    def degree(self) -> np.ndarray:
        return (np.bincount(self.pos_src, minlength=self.num_nodes)
                + np.bincount(self.neg_src, minlength=self.num_nodes))

    def is_adjacent(self, i: np.ndarray, k: np.ndarray) -> np.ndarray:
        """True where k is i itself or a neighbour of i of either sign."""
        keys = self._adjacency_keys
        q = np.asarray(i, dtype=np.int64) * self.num_nodes + np.asarray(k, dtype=np.int64)
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, len(keys) - 1)
        return keys[pos] == q


@dataclass(frozen=True, eq=False)
class SignedGraph:
    """An immutable directed signed graph with densely indexed nodes.

    ``edges`` holds the canonical directed (src, dst) pairs and ``signs`` the
    matching +1/-1 polarity. ``node_labels`` maps dense ids back to the ids in
    the source file.
    """

    num_nodes: int
    edges: np.ndarray
    signs: np.ndarray
    node_labels: tuple[str, ...] = ()
    conflicts: int = 0
    self_loops: int = 0
    duplicates: int = 0

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        signs = np.asarray(self.signs, dtype=np.int8)
        if len(edges) != len(signs):
            raise ValueError("edges and signs differ in length")
        if len(edges) and (edges.min() < 0 or edges.max() >= self.num_nodes):
            raise ValueError("edge endpoint outside [0, num_nodes)")
        if not np.all(np.abs(signs) == 1):
            raise ValueError("signs must be +1 or -1")
        edges.setflags(write=False)
        signs.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "signs", signs)
        if not self.node_labels:
            object.__setattr__(self, "node_labels", tuple(str(i) for i in range(self.num_nodes)))

    @classmethod
    def from_edges(cls, num_nodes: int, edges: Sequence, signs: Sequence) -> "SignedGraph":
        """Build from already dense ids, dropping directed duplicates (last one wins)."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        signs = np.asarray(signs, dtype=np.int8)
        loops = edges[:, 0] == edges[:, 1]
        edges, signs = edges[~loops], signs[~loops]
        keep: dict[tuple[int, int], int] = {}
        conflicts = 0
        for idx, (s, d) in enumerate(edges.tolist()):
            prev = keep.get((s, d))
            if prev is not None and signs[prev] != signs[idx]:
                conflicts += 1
            keep[(s, d)] = idx
        order = sorted(keep.values())
        return cls(num_nodes, edges[order], signs[order], conflicts=conflicts,
                   self_loops=int(loops.sum()), duplicates=len(edges) - len(order))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def labels(self) -> np.ndarray:
        """Per-edge target: 1.0 for positive, 0.0 for negative."""
        return (self.signs > 0).astype(np.float64)

    @property
    def positive_fraction(self) -> float:
        return float(np.mean(self.signs > 0)) if self.num_edges else 0.0

    @cached_property
    def view(self) -> NeighborView:
        return NeighborView.from_edges(self.num_nodes, self.edges, self.signs)

    def view_of(self, edge_indices: np.ndarray) -> NeighborView:
        """Neighbour structure restricted to a subset of edges (e.g. the training split)."""
        idx = np.sort(np.asarray(edge_indices, dtype=np.int64))
        return NeighborView.from_edges(self.num_nodes, self.edges[idx], self.signs[idx])

    @property
    def pos_neighbors(self) -> list[np.ndarray]:
        return self.view.pos_neighbors

    @property
    def neg_neighbors(self) -> list[np.ndarray]:
        return self.view.neg_neighbors

    def same_as(self, other: "SignedGraph") -> bool:
        return (self.num_nodes == other.num_nodes
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.signs, other.signs)
                and tuple(self.node_labels) == tuple(other.node_labels))


def _detect_separator(line: str) -> str | None:
    for sep in _SEPARATORS:
        if sep in line:
            return sep
    return None  # any whitespace


def _label_key(label: str):
    try:
        return (0, int(label), "")
    except ValueError:
        try:
            return (1, float(label), label)
        except ValueError:
            return (2, 0, label)


def load_edge_list(path, fmt: str = "auto") -> SignedGraph:
    """Read ``src<sep>dst<sep>weight[<sep>...]`` lines into a :class:`SignedGraph`.

    Positive weights become +1 and negative weights -1; columns after the
    weight (e.g. timestamps) are ignored. Node ids are re-indexed densely in
    sorted order of the original ids. Self-loops are dropped and counted,
    repeated directed pairs keep their last occurrence.

    Raises:
        GraphFormatError: on a malformed line (message carries the line number).
        ZeroWeightError: on an edge with weight 0.
    """
    path = Path(path)
    sep: str | None = None if fmt == "auto" else {"csv": ",", "tsv": "\t", "space": None}[fmt]
    detected = fmt != "auto"
    raw: list[tuple[str, str, int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text[0] in "#%":
                continue
            if not detected:
                sep, detected = _detect_separator(text), True
            parts = [p.strip() for p in (text.split(sep) if sep else text.split())]
            if len(parts) < 3 or not parts[0] or not parts[1]:
                raise GraphFormatError(path, lineno, line, "expected src, dst, weight")
            try:
                weight = float(parts[2])
            except ValueError:
                raise GraphFormatError(path, lineno, line, "weight is not a number") from None
            if not math.isfinite(weight):
                raise GraphFormatError(path, lineno, line, "weight is not finite")
            if weight == 0:
                raise ZeroWeightError(path, lineno, line, "zero weight has no sign")
            raw.append((parts[0], parts[1], 1 if weight > 0 else -1))

    loops = sum(1 for s, d, _ in raw if s == d)
    if loops:
        log.warning("%s: dropped %d self-loop(s)", path, loops)
    raw = [r for r in raw if r[0] != r[1]]
    labels = sorted({r[0] for r in raw} | {r[1] for r in raw}, key=_label_key)
    index = {lab: i for i, lab in enumerate(labels)}
    edges = np.array([(index[s], index[d]) for s, d, _ in raw], dtype=np.int64).reshape(-1, 2)
    signs = np.array([w for _, _, w in raw], dtype=np.int8)
    g = SignedGraph.from_edges(len(labels), edges, signs)
    if g.conflicts:
        log.warning("%s: %d conflicting duplicate edge(s); kept the last occurrence", path, g.conflicts)
    return SignedGraph(g.num_nodes, g.edges, g.signs, tuple(labels),
                       conflicts=g.conflicts, self_loops=loops, duplicates=g.duplicates)


def write_edge_list(graph: SignedGraph, path, sep: str = ",") -> None:
    """Write ``src,dst,sign`` lines using the original node labels."""
    lab = graph.node_labels
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (s, d), w in zip(graph.edges.tolist(), graph.signs.tolist()):
            fh.write(f"{lab[s]}{sep}{lab[d]}{sep}{int(w)}\n")


@dataclass(frozen=True, eq=False)
class SplitPlan:
    train_edges: np.ndarray
    test_edges: np.ndarray
    seed: int
    fraction: float = 0.2
    num_edges: int = field(default=0)

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "fraction": self.fraction,
            "num_edges": self.num_edges,
            "test_edge_indices": [int(i) for i in self.test_edges],
        })

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        obj = json.loads(text)
        test = np.array(sorted(obj["test_edge_indices"]), dtype=np.int64)
        train = np.setdiff1d(np.arange(obj["num_edges"]), test)
        return cls(train, test, int(obj["seed"]), float(obj["fraction"]), int(obj["num_edges"]))

    def same_as(self, other: "SplitPlan") -> bool:
        return (np.array_equal(self.train_edges, other.train_edges)
                and np.array_equal(self.test_edges, other.test_edges)
                and self.seed == other.seed)


def split(graph: SignedGraph, fraction: float = 0.2, seed: int = 42) -> SplitPlan:
    """Hold out ``floor(fraction * |E|)`` edges for testing, stratified by sign.

    Each sign class contributes its proportional share (rounded), with at
    least one test edge whenever ``fraction * |class| >= 1``.
    """
    if not 0.0 < fraction < 1.0:
        raise SplitConfigError(f"split fraction must lie in (0, 1), got {fraction}")
    m = graph.num_edges
    n_test = int(math.floor(fraction * m))
    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(graph.signs > 0)
    neg = np.flatnonzero(graph.signs < 0)
    n_neg = int(round(fraction * len(neg)))
    if fraction * len(neg) >= 1:
        n_neg = max(n_neg, 1)
    n_neg = min(n_neg, n_test, len(neg))
    n_pos = min(n_test - n_neg, len(pos))
    if fraction * len(pos) >= 1 and n_pos == 0 and n_neg > 1:
        n_neg, n_pos = n_neg - 1, 1
    test = np.concatenate([rng.permutation(pos)[:n_pos], rng.permutation(neg)[:n_neg]])
    test.sort()
    train = np.setdiff1d(np.arange(m), test)
    return SplitPlan(train, test, int(seed), float(fraction), m)


def sample_neutral(view, anchor: int, rng: np.random.Generator) -> int:
    """Draw a node uniformly among those with no link to ``anchor`` (and not ``anchor``)."""
    if isinstance(view, SignedGraph):
        view = view.view
    n = view.num_nodes
    banned = np.zeros(n, dtype=bool)
    banned[anchor] = True
    banned[view.pos_neighbors[anchor]] = True
    banned[view.neg_neighbors[anchor]] = True
    eligible = np.flatnonzero(~banned)
    if len(eligible) == 0:
        raise SamplingError(f"node {anchor} is linked to every other node")
    return int(eligible[rng.integers(len(eligible))])


def sample_neutrals(view: NeighborView, anchors: np.ndarray, rng: np.random.Generator,
                    max_rounds: int = 64) -> np.ndarray:
    """Vectorised :func:`sample_neutral`; entries are -1 where no neutral exists."""
    anchors = np.asarray(anchors, dtype=np.int64)
    n = view.num_nodes
    out = np.full(len(anchors), -1, dtype=np.int64)
    todo = np.flatnonzero(view.degree[anchors] < n - 1)
    for _ in range(max_rounds):
        if len(todo) == 0:
            return out
        draw = rng.integers(0, n, size=len(todo))
        bad = view.is_adjacent(anchors[todo], draw)
        out[todo[~bad]] = draw[~bad]
        todo = todo[bad]
    for t in todo:  # very dense anchors: exact draw
        out[t] = sample_neutral(view, int(anchors[t]), rng)
    return out
