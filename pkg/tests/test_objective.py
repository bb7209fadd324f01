import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sihg import autodiff as ad
from sihg.autodiff import Tape, Tensor
from sihg.manifold import Hyperboloid
from sihg.objective import (DecoderParams, LossWeights, NonFiniteLossError, UndefinedMetricError,
                            classification_loss, classification_loss_logits, evaluate,
                            fermi_dirac, fermi_dirac_from_dist, fermi_dirac_logit, hinge_mean,
                            ranking_losses, roc_auc, total_loss)

from helpers import brute_auc, central_diff, rel_error


class TestDecoder:
    def test_half_at_radius(self):
        assert fermi_dirac_from_dist(np.sqrt(2.0)).item() == pytest.approx(0.5, abs=1e-15)
        dec = DecoderParams(r=3.0, t=0.4)
        assert fermi_dirac_from_dist(np.sqrt(3.0), dec).item() == pytest.approx(0.5, abs=1e-15)

    def test_identical_points(self):
        H = Hyperboloid()
        z = H.expmap0(np.array([0.3, -0.2]))
        p = fermi_dirac(z, z, H).item()
        assert p == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-12)
        assert p == pytest.approx(0.8808, abs=1e-4)

    def test_matches_printed_form(self):
        d = np.linspace(0, 4, 17)
        dec = DecoderParams(2.0, 1.0)
        expect = 1.0 / (np.exp((d ** 2 - dec.r) / dec.t) + 1.0)
        np.testing.assert_allclose(fermi_dirac_from_dist(d, dec).data, expect, rtol=1e-13)

    def test_far_limit(self):
        p = fermi_dirac_from_dist(np.array([5.0, 10.0, 40.0])).data
        assert np.all(np.diff(p) < 0) and p[-1] == 0.0 and np.all(p >= 0)

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            DecoderParams(t=0.0)

    @given(arrays(np.float64, 12, elements=st.floats(0, 6)))
    def test_monotone_decreasing(self, d):
        d = np.sort(d)
        p = fermi_dirac_from_dist(d).data
        assert np.all(np.diff(p) <= 0) and np.all((p >= 0) & (p < 1))

    def test_symmetric_in_endpoints(self, rng):
        H = Hyperboloid()
        a, b = H.expmap0(rng.normal(size=(10, 3))), H.expmap0(rng.normal(size=(10, 3)))
        np.testing.assert_allclose(fermi_dirac(a, b, H).data, fermi_dirac(b, a, H).data, rtol=1e-12)


class TestClassificationLoss:
    def test_coin_flip(self):
        assert classification_loss(np.full(4, 0.5), [1, 0, 1, 0]).item() == pytest.approx(math.log(2))

    def test_perfect_is_clip_floor(self):
        loss = classification_loss([1.0, 0.0], [1, 0]).item()
        assert loss == pytest.approx(-math.log(1 - 1e-7), rel=1e-9)
        assert loss == pytest.approx(1e-7, rel=1e-6)

    def test_single_edge(self):
        assert classification_loss([0.8], [1]).item() == pytest.approx(-math.log(0.8))
        assert classification_loss([0.8], [1]).item() == pytest.approx(0.2231, abs=1e-4)

    def test_empty(self):
        with pytest.raises(ValueError):
            classification_loss([], [])
        with pytest.raises(ValueError):
            classification_loss_logits([], [])

    @given(arrays(np.float64, 10, elements=st.floats(-15, 15)),
           arrays(np.int8, 10, elements=st.integers(0, 1)))
    def test_logit_form_equals_clipped_form_inside_clip(self, x, y):
        p = ad.sigmoid(x).data
        assume(np.all((p > 1e-7) & (p < 1 - 1e-7)))
        a = classification_loss_logits(x, y).item()
        b = classification_loss(p, y).item()
        assert a == pytest.approx(b, rel=1e-9, abs=1e-12)

    @given(arrays(np.float64, 6, elements=st.floats(0, 1)),
           arrays(np.int8, 6, elements=st.integers(0, 1)))
    def test_nonnegative(self, p, y):
        assert classification_loss(p, y).item() >= 0

    def test_logit_loss_keeps_gradient_when_saturated(self):
        x = Tensor(np.array([-40.0, 40.0]), requires_grad=True)
        with Tape() as tape:
            (g,) = tape.backward(classification_loss_logits(x, [1, 0]), [x])
        np.testing.assert_allclose(g, [-0.5, 0.5], rtol=1e-12)

    def test_logit_loss_gradient(self, rng):
        x0, y = rng.normal(size=7) * 3, rng.integers(0, 2, 7)
        x = Tensor(x0, requires_grad=True)
        with Tape() as tape:
            (g,) = tape.backward(classification_loss_logits(x, y), [x])
        fd = central_diff(lambda v: classification_loss_logits(v, y).item(), x0)
        assert rel_error(g, fd, 1e-8) < 1e-6

    def test_decoder_logit(self):
        assert fermi_dirac_logit(1.0).item() == 1.0
        assert fermi_dirac_logit(2.0, DecoderParams(2.0, 0.5)).item() == -4.0


class _Line:
    """One-dimensional stand-in manifold: points are scalars, dist = |x - y|."""

    def dist(self, x, y):
        return ad.sqrt(ad.square(ad.as_tensor(x) - ad.as_tensor(y)))


class TestRanking:
    z = np.array([[0.0], [1.0], [2.0]])

    def _losses(self, pos_pairs, pos_k, neg_pairs, neg_k):
        def arr(v):
            return np.asarray(v, dtype=np.int64).reshape(-1, 2)
        l_pos, l_neg, skipped = ranking_losses(
            Tensor(self.z[:, 0]), arr(pos_pairs), np.asarray(pos_k, dtype=np.int64),
            arr(neg_pairs), np.asarray(neg_k, dtype=np.int64), _Line())
        return l_pos.item(), l_neg.item(), skipped

    def test_satisfied_margin(self):
        # Dist(i,j) = 1, Dist(i,k) = 2
        assert self._losses([(0, 1)], [2], [], [])[0] == 0.0

    def test_active_hinge(self):
        # Dist(i,j) = 2, Dist(i,k) = 1
        assert self._losses([(0, 2)], [1], [], [])[0] == pytest.approx(1.0)

    def test_negative_mirror(self):
        # negative pair at distance 1, neutral at 2
        assert self._losses([], [], [(0, 1)], [2])[1] == pytest.approx(1.0)
        assert self._losses([], [], [(0, 2)], [1])[1] == 0.0

    def test_failed_neutrals_skipped(self):
        l_pos, l_neg, skipped = self._losses([(0, 2), (0, 1)], [1, -1], [(0, 1)], [-1])
        assert skipped == 2 and l_pos == pytest.approx(1.0) and l_neg == 0.0

    def test_hinge_mean_empty(self):
        assert hinge_mean(np.zeros(0), np.zeros(0)).item() == 0.0


class TestTotalLoss:
    def test_only_classification(self):
        w = LossWeights(0.0, 0.0, 0.0)
        assert total_loss(0.7, 5.0, 6.0, -3.0, w).item() == 0.7

    def test_all_ones(self):
        assert total_loss(1.0, 1.0, 1.0, 1.0, LossWeights(1.0, 1.0, 1.0)).item() == 4.0

    def test_default_beta(self):
        assert LossWeights().beta == 0.83

    @given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 5),
           arrays(np.float64, 4, elements=st.floats(-10, 10)), st.integers(1, 3), st.floats(-3, 3))
    def test_linear_in_each_component(self, a, b, c, parts, which, delta):
        w = LossWeights(a, b, c)
        coef = (a, b, c)[which - 1]
        base = total_loss(*parts, w).item()
        bumped = parts.copy()
        bumped[which] += delta
        assert total_loss(*bumped, w).item() - base == pytest.approx(coef * delta, abs=1e-9)

    @pytest.mark.parametrize("slot, name", [(0, "cls"), (1, "pos"), (2, "neg"), (3, "mim")])
    def test_non_finite_component_named(self, slot, name):
        parts = [1.0, 1.0, 1.0, 1.0]
        parts[slot] = float("nan")
        with pytest.raises(NonFiniteLossError) as err:
            total_loss(*parts, LossWeights())
        assert err.value.component == name

    def test_bad_weights(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-1.0)
        with pytest.raises(ValueError):
            LossWeights(gamma=float("inf"))


class TestMetrics:
    def test_perfect(self):
        r = evaluate([0.9, 0.1], [1, 0])
        assert (r.auc, r.f1, r.macro_f1, r.micro_f1) == (1.0, 1.0, 1.0, 1.0)

    def test_tie(self):
        assert roc_auc([0.6, 0.6], [1, 0]) == 0.5

    def test_one_concordant_one_discordant(self):
        assert roc_auc([0.8, 0.7, 0.2], [1, 0, 1]) == 0.5

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.2, 0.3], [1, 1])
        r = evaluate([0.2, 0.7], [1, 1])
        assert r.auc is None and r.f1 == pytest.approx(2 / 3)
        with pytest.raises(UndefinedMetricError):
            evaluate([0.2, 0.7], [1, 1], require_auc=True)

    def test_hand_counted_f1(self):
        # tp=2 fp=1 fn=1 tn=1
        r = evaluate([0.9, 0.8, 0.6, 0.3, 0.1], [1, 1, 0, 1, 0])
        assert r.f1 == pytest.approx(2 / 3)
        assert r.macro_f1 == pytest.approx(0.5 * (2 / 3 + 0.5))
        assert r.micro_f1 == pytest.approx(0.6)

    def test_report_serialises(self):
        import json
        r = evaluate([0.9, 0.1], [1, 0])
        obj = json.loads(r.to_json(split_seed=3, config_hash="abc"))
        assert obj["threshold"] == 0.5 and obj["split_seed"] == 3 and obj["config_hash"] == "abc"

    @given(arrays(np.float64, st.integers(2, 40), elements=st.floats(0, 1, allow_subnormal=False)),
           st.integers(0, 2**31))
    def test_auc_matches_brute_force(self, scores, seed):
        labels = np.random.default_rng(seed).integers(0, 2, len(scores))
        assume(0 < labels.sum() < len(labels))
        # coarse grid so ties actually occur
        s = np.round(scores, 1)
        assert roc_auc(s, labels) == pytest.approx(brute_auc(s, labels), abs=1e-12)

    @given(arrays(np.int64, 30, elements=st.integers(-24, 24)), st.integers(0, 2**31))
    def test_auc_invariant_under_monotone_maps(self, grid, seed):
        # a coarse grid keeps the maps strictly monotone in floating point
        scores = grid / 8.0
        labels = np.random.default_rng(seed).integers(0, 2, 30)
        assume(0 < labels.sum() < 30)
        base = roc_auc(scores, labels)
        for f in (np.exp, lambda v: 3 * v - 7, lambda v: v ** 3, np.arctan):
            assert roc_auc(f(scores), labels) == pytest.approx(base, abs=1e-12)

    @given(arrays(np.float64, 25, elements=st.floats(0, 1)), st.integers(0, 2**31))
    def test_micro_f1_is_accuracy(self, scores, seed):
        labels = np.random.default_rng(seed).integers(0, 2, 25)
        r = evaluate(scores, labels)
        assert r.micro_f1 == pytest.approx(np.mean((scores >= 0.5) == labels.astype(bool)))
        for v in (r.f1, r.macro_f1, r.micro_f1):
            assert 0.0 <= v <= 1.0
