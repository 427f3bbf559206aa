"""Finite-size problem synthesis: covariances, correlated designs, observations.

Covariates are rows of ``X = G Sigma^{1/2}`` with ``G`` i.i.d. N(0, 1/n), so
each row is N(0, Sigma/n).  Observations are ``y = q(X beta, eps)`` applied
elementwise.  All randomness flows through counter-based Philox streams keyed
by (seed, stream tag), so trials are order-independent and parallel-safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotPositiveDefinite, UnsupportedLink
from .measure import LINK_KINDS, ObservationLaw, ScalarMeasure, observation_law

_STREAM_BETA = 1
_STREAM_DESIGN = 2
_STREAM_NOISE = 3

_MIN_EIGENVALUE = 1e-12


def _rng(seed: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class CovarianceSpec:
    kind: str                       # toeplitz | circulant | identity | explicit
    d: int
    rho: float | None = None
    c0: float | None = None
    c1: float | None = None
    ell: int | None = None
    matrix: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def toeplitz(cls, d: int, rho: float) -> "CovarianceSpec":
        if not -1.0 < rho < 1.0:
            raise ValueError("toeplitz rho must lie in (-1, 1)")
        return cls("toeplitz", d, rho=rho)

    @classmethod
    def circulant(cls, d: int, c0: float, c1: float, ell: int) -> "CovarianceSpec":
        if ell >= d / 2:
            raise ValueError("circulant bandwidth ell must be < d/2")
        return cls("circulant", d, c0=c0, c1=c1, ell=ell)

    @classmethod
    def identity(cls, d: int) -> "CovarianceSpec":
        return cls("identity", d)

    @classmethod
    def explicit(cls, matrix) -> "CovarianceSpec":
        m = np.asarray(matrix, dtype=float)
        return cls("explicit", m.shape[0], matrix=m)


@dataclass(frozen=True)
class Covariance:
    """A built covariance: Sigma, its symmetric square roots, eigensystem,
    and the spectral measure (eigenvalues with weight 1/d)."""

    sigma: np.ndarray = field(repr=False)
    sqrt: np.ndarray = field(repr=False)
    inv_sqrt: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)
    measure: ScalarMeasure
    spec: CovarianceSpec

    @property
    def d(self) -> int:
        return self.sigma.shape[0]


def _sigma_matrix(spec: CovarianceSpec) -> np.ndarray:
    d = spec.d
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if spec.kind == "identity":
        return np.eye(d)
    if spec.kind == "toeplitz":
        idx = np.arange(d)
        return spec.rho ** np.abs(idx[:, None] - idx[None, :])
    if spec.kind == "circulant":
        idx = np.arange(d)
        dist = np.abs(idx[:, None] - idx[None, :])
        cyc = np.minimum(dist, d - dist)
        sigma = np.where(cyc == 0, spec.c0, np.where(cyc <= spec.ell, spec.c1, 0.0))
        return sigma.astype(float)
    if spec.kind == "explicit":
        return np.array(spec.matrix, dtype=float)
    raise ValueError(f"unknown covariance kind {spec.kind!r}")


def build_covariance(spec: CovarianceSpec) -> Covariance:
    """Eigendecompose Sigma once; derive both square roots and the measure."""
    sigma = _sigma_matrix(spec)
    if not np.allclose(sigma, sigma.T, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    evals, evecs = np.linalg.eigh(sigma)
    if evals.min() <= _MIN_EIGENVALUE:
        raise NotPositiveDefinite(
            f"minimum eigenvalue {evals.min():.3e} is not strictly positive"
        )
    sqrt = (evecs * np.sqrt(evals)) @ evecs.T
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    return Covariance(
        sigma=sigma, sqrt=sqrt, inv_sqrt=inv_sqrt,
        eigenvalues=evals, eigenvectors=evecs,
        measure=ScalarMeasure.from_eigenvalues(evals), spec=spec,
    )


@dataclass(frozen=True)
class LinkModel:
    """Observation channel y = q(g, eps) with named kind and parameters."""

    kind: str
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise UnsupportedLink(f"unknown link kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def params(self) -> dict:
        return {"sigma": self.sigma} if self.kind != "poisson" else {}

    def law(self, g_variance: float, **kw) -> ObservationLaw:
        return observation_law(self.kind, self.params, g_variance, **kw)

    def sample(self, g: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "poisson":
            return rng.poisson(g**2).astype(float)
        noise = self.sigma * rng.standard_normal(g.shape) if self.sigma > 0 else 0.0
        if self.kind == "linear":
            return g + noise
        if self.kind in ("phase_retrieval_noiseless", "phase_retrieval_gaussian"):
            return np.abs(g) + noise
        if self.kind == "one_bit":
            return np.sign(g) + noise
        raise UnsupportedLink(self.kind)


PRIOR_KINDS = ("spherical", "gaussian", "rademacher")


def _sample_beta(d: int, prior: str, rng: np.random.Generator) -> np.ndarray:
    if prior == "spherical":
        z = rng.standard_normal(d)
        return z * np.sqrt(d) / np.linalg.norm(z)
    if prior == "gaussian":
        return rng.standard_normal(d)
    if prior == "rademacher":
        return rng.choice([-1.0, 1.0], size=d)
    raise ValueError(f"unknown prior {prior!r}")


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray = field(repr=False)
    beta_star: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    seed: int
    cov: Covariance
    link: LinkModel
    prior: str

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def delta(self) -> float:
        return self.n / self.d

    @property
    def sigma_sqrt(self) -> np.ndarray:
        return self.cov.sqrt

    @property
    def sigma_inv_sqrt(self) -> np.ndarray:
        return self.cov.inv_sqrt

    def whitened_design(self) -> np.ndarray:
        """X Sigma^{-1/2}, the i.i.d. N(0, 1/n) design underlying X."""
        return self.X @ self.cov.inv_sqrt


def sample_dataset(
    cov: CovarianceSpec | Covariance,
    link: LinkModel,
    n: int,
    seed: int,
    prior: str = "spherical",
) -> Dataset:
    """Draw (X, beta, y); a pure function of (cov spec, link, n, seed, prior)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if prior not in PRIOR_KINDS:
        raise ValueError(f"unknown prior {prior!r}")
    built = cov if isinstance(cov, Covariance) else build_covariance(cov)
    d = built.d
    beta = _sample_beta(d, prior, _rng(seed, _STREAM_BETA))
    g_iid = _rng(seed, _STREAM_DESIGN).standard_normal((n, d)) / np.sqrt(n)
    X = g_iid @ built.sqrt
    y = link.sample(X @ beta, _rng(seed, _STREAM_NOISE))
    return Dataset(X=X, beta_star=beta, y=y, seed=int(seed),
                   cov=built, link=link, prior=prior)


def plugin_trace(X: np.ndarray) -> float:
    """(1/d) tr(X^T X): consistent estimator of the normalized trace of Sigma."""
    X = np.asarray(X)
    if X.size == 0:
        raise ValueError("X must be nonempty")
    return float(np.sum(X * X) / X.shape[1])
