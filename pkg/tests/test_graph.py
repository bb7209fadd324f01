import json
import logging
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sihg.graph import (GraphFormatError, SamplingError, SignedGraph, SplitConfigError, SplitPlan,
                        ZeroWeightError, load_edge_list, sample_neutral, sample_neutrals, split,
                        write_edge_list)
from sihg import fixtures


def write(tmp_path, text, name="g.txt"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoader:
    def test_single_edge(self, tmp_path):
        g = load_edge_list(write(tmp_path, "0 1 5\n"))
        assert g.num_nodes == 2 and g.num_edges == 1
        assert g.signs.tolist() == [1]
        assert g.pos_neighbors[0].tolist() == [1] and g.pos_neighbors[1].tolist() == [0]
        assert all(len(n) == 0 for n in g.neg_neighbors)

    def test_reciprocal_negative_pair(self, tmp_path):
        g = load_edge_list(write(tmp_path, "0 1 -2\n1 0 -2\n"))
        assert g.num_edges == 2
        assert g.labels.tolist() == [0.0, 0.0]
        v = g.view
        assert len(v.neg_src) == 2  # one undirected pair, stored both ways
        assert g.neg_neighbors[0].tolist() == [1] and g.neg_neighbors[1].tolist() == [0]

    @pytest.mark.parametrize("sep", [",", "\t", " ", "   "])
    def test_separators(self, tmp_path, sep):
        g = load_edge_list(write(tmp_path, f"10{sep}20{sep}1\n20{sep}30{sep}-3{sep}1234567\n"))
        assert g.num_nodes == 3
        assert g.node_labels == ("10", "20", "30")
        assert g.edges.tolist() == [[0, 1], [1, 2]]
        assert g.signs.tolist() == [1, -1]

    def test_comments_and_blank_lines(self, tmp_path):
        g = load_edge_list(write(tmp_path, "# header\n% other\n\n0,1,1\n"))
        assert g.num_edges == 1

    def test_dense_reindex_sorts_numerically(self, tmp_path):
        g = load_edge_list(write(tmp_path, "100 9 1\n9 7 1\n"))
        assert g.node_labels == ("7", "9", "100")
        assert g.edges.tolist() == [[2, 1], [1, 0]]

    def test_malformed_line_reports_line_number(self, tmp_path):
        with pytest.raises(GraphFormatError) as err:
            load_edge_list(write(tmp_path, "0 1 1\n# c\n1 2\n"))
        assert err.value.lineno == 3
        assert ":3:" in str(err.value)

    def test_non_numeric_weight(self, tmp_path):
        with pytest.raises(GraphFormatError) as err:
            load_edge_list(write(tmp_path, "0 1 x\n"))
        assert err.value.lineno == 1

    def test_zero_weight_rejected(self, tmp_path):
        with pytest.raises(ZeroWeightError) as err:
            load_edge_list(write(tmp_path, "0 1 1\n1 2 0\n"))
        assert err.value.lineno == 2

    def test_self_loop_dropped_with_warning(self, tmp_path, caplog):
        with caplog.at_level(logging.WARNING, logger="sihg.graph"):
            g = load_edge_list(write(tmp_path, "0 0 1\n0 1 1\n"))
        assert g.self_loops == 1 and g.num_edges == 1
        assert "self-loop" in caplog.text

    def test_conflicting_duplicate_keeps_last(self, tmp_path):
        g = load_edge_list(write(tmp_path, "0 1 1\n1 2 1\n0 1 -1\n"))
        assert g.conflicts == 1 and g.num_edges == 2
        assert g.edges.tolist() == [[1, 2], [0, 1]]
        assert g.signs.tolist() == [1, -1]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_edge_list(tmp_path / "nope.csv")

    def test_round_trip(self, tmp_path):
        g = load_edge_list(write(tmp_path, "5 3 2\n3 8 -1\n8 5 4\n5 8 -7\n"))
        out = tmp_path / "rt.csv"
        write_edge_list(g, out)
        assert load_edge_list(out).same_as(g)


class TestInvariants:
    def test_rejects_bad_construction(self):
        with pytest.raises(ValueError):
            SignedGraph(2, [[0, 2]], [1])
        with pytest.raises(ValueError):
            SignedGraph(2, [[0, 1]], [0])
        with pytest.raises(ValueError):
            SignedGraph(2, [[0, 1]], [1, 1])

    def test_immutable_arrays(self):
        g = SignedGraph.from_edges(3, [[0, 1]], [1])
        with pytest.raises(ValueError):
            g.edges[0, 0] = 2

    def test_pos_and_neg_neighbors_are_disjoint(self):
        g = SignedGraph.from_edges(3, [[0, 1], [1, 0], [1, 2]], [1, -1, 1])
        for i in range(3):
            assert not set(g.pos_neighbors[i]) & set(g.neg_neighbors[i])
        # the later directed edge decides the undirected sign
        assert g.neg_neighbors[0].tolist() == [1]


edge_lists = st.lists(
    st.tuples(st.integers(0, 14), st.integers(0, 14), st.sampled_from([-1, 1])),
    min_size=1, max_size=60)


@given(edge_lists)
def test_view_is_symmetric_and_sign_disjoint(rows):
    edges = [(s, d) for s, d, _ in rows]
    g = SignedGraph.from_edges(15, edges, [w for *_, w in rows])
    for sign_lists in (g.pos_neighbors, g.neg_neighbors):
        for i, nbrs in enumerate(sign_lists):
            for j in nbrs:
                assert i in sign_lists[j]
    for i in range(15):
        assert not set(g.pos_neighbors[i]) & set(g.neg_neighbors[i])
        assert i not in g.pos_neighbors[i] and i not in g.neg_neighbors[i]


@given(edge_lists)
def test_directed_pairs_unique(rows):
    g = SignedGraph.from_edges(15, [(s, d) for s, d, _ in rows], [w for *_, w in rows])
    pairs = [tuple(e) for e in g.edges.tolist()]
    assert len(pairs) == len(set(pairs))
    assert set(g.labels.tolist()) <= {0.0, 1.0}


def _synthetic(m, pos_frac=0.9, n=3783, seed=0):
    rng = np.random.default_rng(seed)
    keys = rng.choice(n * n, size=int(m * 1.3), replace=False)
    src, dst = keys // n, keys % n
    keep = src != dst
    edges = np.stack([src[keep], dst[keep]], 1)[:m]
    signs = np.where(rng.random(m) < pos_frac, 1, -1)
    return SignedGraph(n, edges, signs)


class TestSplit:
    def test_bitcoin_alpha_size(self):
        g = _synthetic(14145)
        plan = split(g, 0.2, 42)
        assert len(plan.test_edges) == 2829
        assert len(plan.train_edges) == 14145 - 2829

    def test_partition_and_both_classes(self):
        g = _synthetic(1000, pos_frac=0.95)
        plan = split(g, 0.2, 3)
        union = np.union1d(plan.train_edges, plan.test_edges)
        assert np.array_equal(union, np.arange(1000))
        assert len(np.intersect1d(plan.train_edges, plan.test_edges)) == 0
        test_signs = g.signs[plan.test_edges]
        assert (test_signs > 0).any() and (test_signs < 0).any()

    def test_minority_class_guarantee(self):
        g = SignedGraph.from_edges(12, [(i, i + 1) for i in range(11)], [1] * 6 + [-1] * 5)
        plan = split(g, 0.2, 0)
        assert len(plan.test_edges) == 2
        assert set(g.signs[plan.test_edges].tolist()) == {1, -1}

    def test_determinism(self):
        g = _synthetic(500)
        assert split(g, 0.2, 9).same_as(split(g, 0.2, 9))
        assert not split(g, 0.2, 9).same_as(split(g, 0.2, 10))

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
    def test_fraction_out_of_range(self, fraction):
        with pytest.raises(SplitConfigError):
            split(_synthetic(50, n=40), fraction, 0)

    def test_json_round_trip(self):
        plan = split(_synthetic(300), 0.2, 5)
        obj = json.loads(plan.to_json())
        assert set(obj) >= {"seed", "fraction", "test_edge_indices"}
        assert SplitPlan.from_json(plan.to_json()).same_as(plan)

    @given(st.integers(10, 400), st.floats(0.05, 0.95), st.integers(0, 2**31))
    def test_size_within_one_edge(self, m, fraction, seed):
        g = _synthetic(m, n=200, seed=m)
        plan = split(g, fraction, seed)
        assert abs(len(plan.test_edges) - fraction * m) <= 1


class TestNeutralSampling:
    def test_path_graph_has_one_choice(self, rng):
        g = SignedGraph.from_edges(3, [(0, 1), (1, 2)], [1, -1])
        assert {sample_neutral(g, 0, rng) for _ in range(20)} == {2}

    def test_complete_triangle_raises(self, rng):
        g = SignedGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)], [1, -1, 1])
        with pytest.raises(SamplingError):
            sample_neutral(g, 0, rng)

    def test_star_is_uniform(self):
        g = SignedGraph.from_edges(4, [(0, 1), (0, 2), (0, 3)], [1, 1, -1])
        rng = np.random.default_rng(0)
        counts = Counter(sample_neutral(g, 1, rng) for _ in range(1000))
        assert set(counts) == {2, 3}
        for k in (2, 3):
            assert counts[k] / 1000 == pytest.approx(0.5, abs=0.05)

    def test_vectorised_marks_saturated_anchors(self, rng):
        g = SignedGraph.from_edges(4, [(0, 1), (1, 2), (0, 2), (2, 3)], [1, -1, 1, 1])
        out = sample_neutrals(g.view, np.array([2, 3, 0]), rng)
        assert out[0] == -1
        assert out[1] in (0, 1) and out[2] == 3

    @given(edge_lists, st.integers(0, 2**31))
    def test_vectorised_draws_are_never_neighbours(self, rows, seed):
        g = SignedGraph.from_edges(15, [(s, d) for s, d, _ in rows], [w for *_, w in rows])
        anchors = np.arange(15).repeat(3)
        out = sample_neutrals(g.view, anchors, np.random.default_rng(seed))
        for a, k in zip(anchors, out):
            if k < 0:
                assert g.view.degree[a] == 14
                continue
            assert k != a and k not in g.pos_neighbors[a] and k not in g.neg_neighbors[a]

    def test_vectorised_star_uniform(self):
        g = SignedGraph.from_edges(4, [(0, 1), (0, 2), (0, 3)], [1, 1, -1])
        out = sample_neutrals(g.view, np.ones(1000, dtype=int), np.random.default_rng(1))
        assert np.mean(out == 2) == pytest.approx(0.5, abs=0.05)
        assert set(out.tolist()) == {2, 3}


class TestFixtures:
    def test_cliques_counts(self):
        g = fixtures.two_cliques(seed=3)
        assert g.num_nodes == 12
        assert int((g.signs > 0).sum()) == 30 and int((g.signs < 0).sum()) == 36

    def test_triangles_patterns(self):
        g = fixtures.triangles(seed=1)
        assert g.num_nodes == 12 and g.num_edges == 12
        found = set()
        for t in range(4):
            nodes = set(range(3 * t, 3 * t + 3))
            mask = np.isin(g.edges[:, 0], list(nodes))
            signs = sorted(g.signs[mask].tolist(), reverse=True)
            found.add("".join("+" if s > 0 else "-" for s in signs))
        assert found == set(fixtures.TRIANGLE_PATTERNS)
