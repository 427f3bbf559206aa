import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specglm.errors import NonFinite, PoleHit, UnsupportedLink
from specglm.measure import (ScalarMeasure, cond_moments, expect_obs,
                             expect_rational, moment, moment_ratio,
                             observation_law)
from specglm.model import CovarianceSpec, build_covariance


def gauss_moment(variance, k):
    # E[Z^k] for Z ~ N(0, variance)
    if k % 2:
        return 0.0
    return variance ** (k // 2) * math.prod(range(1, k, 2))


@st.composite
def measures(draw):
    n = draw(st.integers(1, 6))
    vals = draw(st.lists(st.floats(0.05, 50.0), min_size=n, max_size=n))
    raw = draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n))
    w = np.array(raw) / np.sum(raw)
    return ScalarMeasure(np.array(vals), w)


class TestScalarMeasure:
    def test_weights_must_normalize(self):
        with pytest.raises(ValueError):
            ScalarMeasure(np.array([1.0, 2.0]), np.array([0.6, 0.6]))

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            ScalarMeasure(np.array([1.0, 2.0]), np.array([1.5, -0.5]))

    def test_support_edges(self):
        m = ScalarMeasure(np.array([2.0, 0.5, 1.0]), np.array([0.2, 0.3, 0.5]))
        assert m.inf_support == 0.5
        assert m.sup_support == 2.0


class TestMoment:
    def test_point_mass_square(self):
        assert moment(ScalarMeasure.point_mass(1.0), 2) == 1.0

    def test_two_atoms_mean(self):
        m = ScalarMeasure(np.array([1.0, 3.0]), np.array([0.5, 0.5]))
        assert moment(m, 1) == 2.0

    def test_toeplitz_eigen_measure_mean_is_unit(self):
        # unit diagonal forces the mean eigenvalue to be exactly 1
        cov = build_covariance(CovarianceSpec.toeplitz(2000, 0.9))
        assert moment(cov.measure, 1) == pytest.approx(1.0, abs=1e-9)


class TestExpectRational:
    def test_point_mass(self):
        m = ScalarMeasure.point_mass(1.0)
        assert expect_rational(m, 1, 1, 0.8, 0.3) == pytest.approx(2.0, rel=1e-14)

    def test_degenerate_exponent_is_moment(self):
        m = ScalarMeasure(np.array([1.0, 2.0]), np.array([0.25, 0.75]))
        assert expect_rational(m, 3, 0, 5.0, 1.0) == moment(m, 3)

    def test_two_atom_sum(self):
        m = ScalarMeasure(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
        expected = 0.5 * (1.0 / 9.0) + 0.5 * (4.0 / 9.0)
        assert expect_rational(m, 2, 2, 3.0, 0.0) == pytest.approx(expected, rel=1e-14)

    def test_pole_hit(self):
        m = ScalarMeasure(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
        with pytest.raises(PoleHit):
            expect_rational(m, 1, 1, 2.0, 1.0)

    @settings(max_examples=60, deadline=None)
    @given(measures(), st.integers(1, 3), st.integers(0, 2),
           st.floats(-0.5, 0.5))
    def test_matches_naive_loop(self, m, p, q, x):
        gamma = m.sup_support * max(x, 0.0) + m.inf_support * min(x, 0.0) + 7.0
        naive = sum(w * v**p / (gamma - x * v) ** q
                    for v, w in zip(m.values, m.weights))
        assert expect_rational(m, p, q, gamma, x) == pytest.approx(naive, rel=1e-14)


class TestExpectObs:
    def test_normalization(self):
        law = observation_law("phase_retrieval_noiseless", {}, 0.7)
        assert expect_obs(law, lambda g, y: np.ones_like(g)) == pytest.approx(1.0, abs=1e-12)

    def test_gaussian_second_moment(self):
        v = 0.37
        law = observation_law("linear", {"sigma": 0.5}, v)
        assert expect_obs(law, lambda g, y: g * g) == pytest.approx(v, abs=1e-10)

    def test_y_square_noiseless_pr(self):
        law = observation_law("phase_retrieval_noiseless", {}, 1.0)
        assert expect_obs(law, lambda g, y: y * y) == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("k", [0, 2, 4, 6, 8])
    def test_polynomials_to_degree8(self, k):
        v = 1.7
        law = observation_law("one_bit", {"sigma": 0.3}, v)
        got = expect_obs(law, lambda g, y: g**k)
        assert got == pytest.approx(gauss_moment(v, k), rel=1e-9)

    def test_nonfinite_raises(self):
        law = observation_law("linear", {"sigma": 0.2}, 1.0)
        with pytest.raises(NonFinite):
            expect_obs(law, lambda g, y: g / (g - g))

    def test_unknown_kind(self):
        with pytest.raises(UnsupportedLink):
            observation_law("logistic", {}, 1.0)


class TestCondMoments:
    def test_poisson_m0_at_zero(self):
        v = 1.3
        law = observation_law("poisson", {}, v)
        m0, _ = cond_moments(law, 0.0)
        # E[exp(-G^2)] for G ~ N(0, v), against an independent quadrature
        x, w = np.polynomial.hermite.hermgauss(80)
        oracle = float(np.sum(w / math.sqrt(math.pi) * np.exp(-(x * math.sqrt(2 * v)) ** 2)))
        assert m0 == pytest.approx(oracle, rel=1e-10)
        assert m0 == pytest.approx((1 + 2 * v) ** -0.5, rel=1e-10)

    def test_noiseless_pr_ratio(self):
        v = 0.25   # = E[S]/delta
        law = observation_law("phase_retrieval_noiseless", {}, v)
        ys = np.array([0.3, 0.9, 2.4])
        m0, m2 = cond_moments(law, ys)
        assert np.allclose(m2 / m0, ys**2 / v, rtol=1e-12)

    def test_linear_marginal_at_zero(self):
        v, sig = 2.0, 0.5
        law = observation_law("linear", {"sigma": sig}, v)
        m0, _ = cond_moments(law, 0.0)
        assert m0 == pytest.approx(1 / math.sqrt(2 * math.pi * (v + sig**2)), rel=1e-9)

    def test_discrete_marginal_sums_to_one(self):
        law = observation_law("poisson", {}, 0.8)
        m0, _ = cond_moments(law, np.arange(law.y_max + 1))
        assert m0.sum() == pytest.approx(1.0, abs=1e-8)

    def test_m0_m2_both_integrate_to_one(self):
        v, sig = 1.5, 0.7
        law = observation_law("phase_retrieval_gaussian", {"sigma": sig}, v)
        span = 6 * math.sqrt(v) + 8 * sig
        ys = np.linspace(-span, span, 200_001)
        m0, m2 = cond_moments(law, ys)
        assert np.trapezoid(m0, ys) == pytest.approx(1.0, abs=1e-6)
        assert np.trapezoid(m2, ys) == pytest.approx(1.0, abs=1e-6)

    def test_moment_ratio_poisson_closed_form(self):
        v = 1.0
        law = observation_law("poisson", {}, v)
        ys = np.arange(0, 31)
        assert np.allclose(moment_ratio(law, ys), (2 * ys + 1) / (1 + 2 * v),
                           rtol=1e-9)

    def test_moment_ratio_deterministic_at_origin(self):
        law = observation_law("phase_retrieval_noiseless", {}, 0.5)
        assert moment_ratio(law, 0.0) == 0.0
