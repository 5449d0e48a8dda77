"""Class-aware margin loss: worked examples, invariants, gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewshot import autodiff as ad
from fewshot.cal import CalTerms, cal_loss, cal_terms, combined_loss
from fewshot.gradcheck import grad_check


def points_at_distances(distances, dim=4):
    """Points along distinct axes at the given distances from the origin."""
    out = np.zeros((len(distances), dim))
    for i, d in enumerate(distances):
        out[i, i % dim] = d
    return out


class TestCalTerms:
    def test_worked_example(self):
        # positives at distances {1, 2}, negatives at {4, 5}
        terms = cal_terms(np.zeros(4), points_at_distances([1.0, 2.0]),
                          points_at_distances([4.0, 5.0]))
        assert terms.central == 1.5
        assert terms.d_max_pos == 2.0
        assert terms.d_min_neg == 4.0
        assert terms.n_pos == 2 and terms.n_neg == 2

    def test_positives_on_prototype(self):
        proto = np.array([1.0, -2.0, 3.0])
        terms = cal_terms(proto, np.stack([proto, proto]), np.zeros((1, 3)))
        assert terms.central == 0.0 and terms.d_max_pos == 0.0

    def test_single_positive_mean_equals_max(self):
        rng = np.random.default_rng(0)
        terms = cal_terms(rng.standard_normal(3), rng.standard_normal((1, 3)),
                          rng.standard_normal((2, 3)))
        assert terms.central == terms.d_max_pos

    def test_empty_sets_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            cal_terms(np.zeros(2), np.zeros((0, 2)), np.ones((1, 2)))
        with pytest.raises(ValueError, match="negative"):
            cal_terms(np.zeros(2), np.ones((1, 2)), np.zeros((0, 2)))

    def test_translation_invariance(self):
        rng = np.random.default_rng(1)
        proto = rng.standard_normal(5)
        pos = rng.standard_normal((4, 5))
        neg = rng.standard_normal((6, 5))
        shift = rng.standard_normal(5)
        a = cal_terms(proto, pos, neg)
        b = cal_terms(proto + shift, pos + shift, neg + shift)
        assert a.central == pytest.approx(b.central, rel=1e-12)
        assert a.d_max_pos == pytest.approx(b.d_max_pos, rel=1e-12)
        assert a.d_min_neg == pytest.approx(b.d_min_neg, rel=1e-12)

    def test_mean_above_max_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            CalTerms(central=3.0, d_max_pos=2.0, d_min_neg=1.0, n_pos=2, n_neg=1)


class TestCalLoss:
    def test_worked_example_half(self):
        # relu(2 - 4 + 0.5) + relu(2 - 1.5) = 0 + 0.5
        terms = CalTerms(central=1.5, d_max_pos=2.0, d_min_neg=4.0, n_pos=2, n_neg=2)
        assert cal_loss([terms], margin=0.5) == 0.5

    def test_boundary_of_both_hinges(self):
        terms = CalTerms(central=2.0, d_max_pos=2.0, d_min_neg=2.0, n_pos=1, n_neg=1)
        assert cal_loss([terms], margin=0.0) == 0.0

    def test_both_hinges_active(self):
        # relu(3 - 2 + 1) + relu(3 - 3) = 2
        terms = CalTerms(central=3.0, d_max_pos=3.0, d_min_neg=2.0, n_pos=2, n_neg=2)
        assert cal_loss([terms], margin=1.0) == 2.0

    def test_mean_over_classes(self):
        a = CalTerms(central=1.5, d_max_pos=2.0, d_min_neg=4.0, n_pos=2, n_neg=2)
        b = CalTerms(central=3.0, d_max_pos=3.0, d_min_neg=2.0, n_pos=2, n_neg=2)
        assert cal_loss([a, b], margin=0.5) == pytest.approx((0.5 + 1.5) / 2)

    def test_negative_margin_rejected(self):
        terms = CalTerms(central=1.0, d_max_pos=1.0, d_min_neg=1.0, n_pos=1, n_neg=1)
        with pytest.raises(ValueError, match="margin"):
            cal_loss([terms], margin=-0.1)

    def test_zero_iff_equal_distances_and_satisfied_margin(self):
        # positives all at the same distance r, nearest negative at r + margin
        r, margin = 1.0, 0.5
        proto = np.zeros(4)
        pos = points_at_distances([r, r, r])
        neg = points_at_distances([r + margin, r + margin + 1.0])
        terms = cal_terms(proto, pos, neg)
        assert cal_loss([terms], margin=margin) == 0.0
        # unequal positive distances break exact zero through the mean hinge
        pos_unequal = points_at_distances([r, r / 2])
        assert cal_loss([cal_terms(proto, pos_unequal, neg)], margin=margin) > 0.0


class TestCombinedLoss:
    def test_zero_case(self):
        bd = combined_loss(0.0, 0.0)
        assert bd.l_comb == 0.0

    def test_half_probability_plus_margin_term(self):
        bd = combined_loss(float(np.log(2.0)), 0.5)
        assert bd.l_comb == pytest.approx(1.1931, abs=1e-4)

    def test_zero_cal_means_identity(self):
        ce = 0.7234
        bd = combined_loss(ce, 0.0, margin=0.5)
        assert bd.l_comb == ce
        assert bd.margin == 0.5

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            combined_loss(float("nan"), 0.0)
        with pytest.raises(ValueError, match="non-finite"):
            combined_loss(0.1, float("inf"))

    def test_combined_never_below_ce(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            ce, lca = rng.uniform(0, 5), rng.uniform(0, 5)
            bd = combined_loss(ce, lca)
            assert bd.l_comb >= bd.ce
            assert (bd.l_comb == bd.ce) == (bd.l_ca == 0.0)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_cal_loss_nonnegative_property(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    n_classes = data.draw(st.integers(2, 5))
    dim = data.draw(st.integers(2, 8))
    margin = data.draw(st.floats(0, 2))
    terms = []
    for _ in range(n_classes):
        proto = rng.standard_normal(dim)
        pos = rng.standard_normal((rng.integers(1, 6), dim))
        neg = rng.standard_normal((rng.integers(1, 6), dim))
        terms.append(cal_terms(proto, pos, neg))
    assert cal_loss(terms, margin) >= 0.0


class TestCalGradient:
    def test_margin_term_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        emb = ad.Parameter(rng.standard_normal((6, 3)), "emb")
        cls = np.repeat(np.arange(2), 3)

        def build():
            avg = np.zeros((2, 6))
            for i in range(2):
                avg[i, cls == i] = 1.0 / 3.0
            protos = ad.matmul(ad.constant(avg), emb)
            dist = ad.euclidean_distances(emb, protos)
            total = None
            for i in range(2):
                col = ad.take_column(dist, i)
                pos = ad.take_rows(col, np.flatnonzero(cls == i))
                neg = ad.take_rows(col, np.flatnonzero(cls != i))
                term = ad.relu(ad.reduce_max(pos) - ad.reduce_min(neg) + 0.5) \
                    + ad.relu(ad.reduce_max(pos) - ad.reduce_mean(pos))
                total = term if total is None else total + term
            return total * 0.5

        res = grad_check(build, [emb], h=1e-6, rtol=1e-3, atol=1e-5)
        assert res.ok, res.failures[:3]
        assert res.checked > 0
