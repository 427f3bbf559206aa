import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specglm.errors import ADomain, DegenerateLink, NonFinite
from specglm.measure import ScalarMeasure, observation_law
from specglm.preprocess import (f_a, make_preprocessor, t_support,
                                threshold_cap, threshold_information)

MEAN_SIGMA = 1.0


def pr_law(delta, mean_sigma=MEAN_SIGMA):
    return observation_law("phase_retrieval_noiseless", {}, mean_sigma / delta)


class TestNamedKinds:
    def test_subset_indicator_values(self):
        delta = 2.0
        law = pr_law(delta)
        p = make_preprocessor("subset", {"K": np.sqrt(2)}, law, delta)
        root_v = np.sqrt(MEAN_SIGMA / delta)
        assert p(np.array([1.0 * root_v])) == 0.0
        assert p(np.array([2.0 * root_v])) == 1.0
        assert t_support(p, law) == (0.0, 1.0)

    def test_trimming_values_and_support(self):
        delta = 1.0
        law = pr_law(delta)
        p = make_preprocessor("trimming", {"K": np.sqrt(7)}, law, delta)
        assert p(np.array([1.0]))[0] == pytest.approx(1.0)       # kept, scaled square
        assert p(np.array([10.0]))[0] == 0.0                     # trimmed away
        lo, hi = t_support(p, law)
        assert lo == 0.0
        assert hi == pytest.approx(7.0, rel=1e-12)

    def test_identity_trunc_clamps(self):
        delta = 4.0
        law = pr_law(delta)
        p = make_preprocessor("identity_trunc", {"K": 3.0}, law, delta)
        assert p(np.array([100.0]))[0] == 3.0
        assert p(np.array([-100.0]))[0] == -3.0
        assert t_support(p, law) == (-3.0, 3.0)

    def test_custom(self):
        delta = 2.0
        law = pr_law(delta)
        p = make_preprocessor("custom", {"fn": lambda y: np.minimum(y * y, 2.0)},
                              law, delta)
        assert p(np.array([10.0]))[0] == 2.0


class TestOptimalLimit:
    def test_noiseless_pr_closed_form(self):
        delta = 3.0
        law = pr_law(delta)
        p = make_preprocessor("optimal_limit", {"clamp": 10.0}, law, delta)
        ys = np.array([0.2, 0.5, 1.0, 2.0, 5.0])
        expected = np.maximum(1.0 - MEAN_SIGMA / (delta * ys**2), -10.0)
        assert np.max(np.abs(p(ys) - expected)) < 1e-6
        assert t_support(p, law) == (-10.0, 1.0)

    def test_poisson_closed_form(self):
        delta = 1.0
        law = observation_law("poisson", {}, MEAN_SIGMA / delta)
        p = make_preprocessor("optimal_limit", {"clamp": 10.0}, law, delta)
        ys = np.arange(0, 31, dtype=float)
        expected = (ys - MEAN_SIGMA / delta) / (ys + 0.5)
        assert np.max(np.abs(p(ys) - expected)) < 1e-6

    def test_degenerate_one_bit(self):
        law = observation_law("one_bit", {"sigma": 0.0}, 0.5)
        with pytest.raises(DegenerateLink):
            make_preprocessor("optimal_limit", {}, law, 2.0)

    def test_unclamped_pr_is_unbounded(self):
        law = pr_law(2.0)
        with pytest.raises(NonFinite):
            make_preprocessor("optimal_limit", {"clamp": None}, law, 2.0)


class TestOptimalThreshold:
    def test_needs_measure_or_cap(self):
        law = pr_law(2.0)
        with pytest.raises(ValueError):
            make_preprocessor("optimal_threshold", {}, law, 2.0)

    def test_rejects_subthreshold_delta(self):
        sigma = ScalarMeasure.point_mass(1.0)
        delta = 0.4    # below the cap 0.5 for this channel
        law = pr_law(delta)
        with pytest.raises(DegenerateLink):
            make_preprocessor("optimal_threshold",
                              {"sigma_measure": sigma, "clamp": None}, law, delta)

    def test_limit_as_delta_drops_to_cap(self):
        # near the cap the threshold form degenerates to the limit form
        sigma = ScalarMeasure.point_mass(1.0)
        cap = threshold_cap(sigma, pr_law(1.0))
        delta = 1.0001 * cap
        law = pr_law(delta)
        p_thr = make_preprocessor("optimal_threshold",
                                  {"sigma_measure": sigma, "clamp": 10.0},
                                  law, delta)
        p_lim = make_preprocessor("optimal_limit", {"clamp": 10.0}, law, delta)
        probe = np.linspace(0.05, 6 * np.sqrt(law.g_variance), 500)
        assert np.max(np.abs(p_thr(probe) - p_lim(probe))) < 1e-2

    def test_pure_threshold_form_is_intrinsically_bounded(self):
        sigma = ScalarMeasure.point_mass(1.0)
        delta = 0.55    # cap is 0.5
        law = pr_law(delta)
        p = make_preprocessor("optimal_threshold",
                              {"sigma_measure": sigma, "clamp": None}, law, delta)
        s = np.sqrt(p.params["delta_cap"] / delta)
        assert p.t_inf == pytest.approx(1.0 - 1.0 / (1.0 - s), rel=1e-6)


class TestThresholdFunctional:
    def test_noiseless_pr_information_is_two(self):
        # (delta/E[S]) G^2 is chi-square_1; its variance is 2
        assert threshold_information(pr_law(3.0)) == pytest.approx(2.0, rel=1e-10)

    def test_cap_depends_on_first_two_moments_only(self):
        m_a = ScalarMeasure(np.array([1.0, 3.0]), np.array([0.5, 0.5]))
        # same mean 2 and second moment 5
        m_b = ScalarMeasure(np.array([2.0 - np.sqrt(1.0), 2.0 + np.sqrt(1.0)]),
                            np.array([0.5, 0.5]))
        law = observation_law("phase_retrieval_noiseless", {}, 2.0 / 3.0)
        assert threshold_cap(m_a, law) == pytest.approx(threshold_cap(m_b, law),
                                                        rel=1e-10)


class TestFa:
    def test_zero_t(self):
        law = pr_law(2.0)
        p = make_preprocessor("subset", {"K": 10.0}, law, 2.0)
        assert f_a(p, 1.7, np.array([0.01]))[0] == 0.0

    def test_unit_t(self):
        law = pr_law(2.0)
        p = make_preprocessor("subset", {"K": 0.5}, law, 2.0)
        big = 10.0 * np.sqrt(law.g_variance)
        assert f_a(p, 2.0, np.array([big]))[0] == pytest.approx(1.0)

    def test_binary_values(self):
        law = pr_law(2.0)
        p = make_preprocessor("subset", {"K": 1.0}, law, 2.0)
        root_v = np.sqrt(law.g_variance)
        vals = f_a(p, 1.5, np.array([0.1 * root_v, 3.0 * root_v]))
        assert np.allclose(sorted(vals), [0.0, 2.0])

    def test_a_domain(self):
        law = pr_law(2.0)
        p = make_preprocessor("subset", {"K": 1.0}, law, 2.0)
        with pytest.raises(ADomain):
            f_a(p, 1.0, np.array([1.0]))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(1.1, 30.0), st.floats(0.01, 5.0))
    def test_bounded_by_edge_ratio(self, a, y):
        law = pr_law(2.0)
        p = make_preprocessor("optimal_limit", {"clamp": 10.0}, law, 2.0)
        val = f_a(p, a, np.array([y]))[0]
        bound = max(abs(p.t_inf), p.t_sup) / (a - p.t_sup)
        assert abs(val) <= bound + 1e-9


class TestBoundednessProbe:
    @pytest.mark.parametrize("kind,params", [
        ("subset", {"K": 1.2}),
        ("trimming", {"K": 2.0}),
        ("identity_trunc", {"K": 3.0}),
        ("optimal_limit", {"clamp": 10.0}),
    ])
    def test_probe_within_edges(self, kind, params):
        delta = 2.5
        law = pr_law(delta)
        p = make_preprocessor(kind, params, law, delta)
        probe = np.linspace(0.0, 8 * np.sqrt(law.g_variance), 10_000)
        vals = p(probe)
        assert vals.max() <= p.t_sup + 1e-9
        assert vals.min() >= p.t_inf - 1e-9
        assert p.t_sup > 0


@pytest.mark.parametrize("kind,params", [
    ("subset", {"K": 1.2}), ("trimming", {"K": 2.5})])
def test_mean_f_decreasing_in_a_for_nonnegative_t(kind, params):
    # x -> x/(a-x) falls in a only where x >= 0; sign-changing kinds
    # (clamped optimal) are exempt
    delta = 2.0
    law = pr_law(delta)
    p = make_preprocessor(kind, params, law, delta)
    from specglm.theory import _ef, build_context
    ctx = build_context(delta, ScalarMeasure.point_mass(1.0), law, p)
    grid = np.linspace(p.t_sup + 0.05, p.t_sup + 20.0, 200)
    vals = _ef(ctx, grid)
    assert np.all(np.diff(vals) < 0)


def test_mean_f_continuous_in_a_for_optimal_kind():
    delta = 2.0
    law = pr_law(delta)
    p = make_preprocessor("optimal_limit", {"clamp": 10.0}, law, delta)
    from specglm.theory import _ef, build_context
    ctx = build_context(delta, ScalarMeasure.point_mass(1.0), law, p)
    grid = np.linspace(p.t_sup + 0.2, p.t_sup + 20.0, 2000)
    vals = _ef(ctx, grid)
    assert np.all(np.abs(np.diff(vals)) < 0.01)
