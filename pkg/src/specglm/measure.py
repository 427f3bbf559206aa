"""Scalar measures and the deterministic expectation engine.

Two substrates back every asymptotic formula in the package:

* ``ScalarMeasure`` -- a discrete probability measure holding the limiting
  eigenvalue distribution of the covariance (atoms + weights).  All
  covariance-side expectations are rational-function moments, exact on atoms.

* ``ObservationLaw`` -- the joint law of the Gaussian projection ``G`` with
  variance ``mean_sigma / delta`` and the observation ``Y = q(G, eps)``,
  discretized on a Gauss-Hermite tensor grid (or a pmf grid for
  integer-valued outputs).  Every observation-side expectation is a weighted
  sum over that grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import gammaln

from .errors import NonFinite, PoleHit, UnsupportedLink

G_NODES_DEFAULT = 201
NOISE_NODES_DEFAULT = 101

# Links whose output is a deterministic function of g when sigma == 0.
_DETERMINISTIC_BASES = {
    "phase_retrieval_noiseless": np.abs,
    "phase_retrieval_gaussian": np.abs,
    "one_bit": np.sign,
    "linear": lambda g: g,
}

LINK_KINDS = (
    "phase_retrieval_noiseless",
    "phase_retrieval_gaussian",
    "one_bit",
    "linear",
    "poisson",
)


@dataclass(frozen=True)
class ScalarMeasure:
    """Discrete probability measure: atoms ``values`` with ``weights``."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)
        if values.shape != weights.shape or values.size == 0:
            raise ValueError("values and weights must be matching nonempty arrays")
        if not np.all(np.isfinite(values)):
            raise ValueError("atom values must be finite")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {weights.sum()}, expected 1 +- 1e-12")
        values.flags.writeable = False
        weights.flags.writeable = False

    @classmethod
    def point_mass(cls, value: float) -> "ScalarMeasure":
        return cls(np.array([value]), np.array([1.0]))

    @classmethod
    def from_eigenvalues(cls, eigenvalues) -> "ScalarMeasure":
        """Uniform measure on a spectrum (weight 1/d per eigenvalue)."""
        ev = np.asarray(eigenvalues, dtype=float).ravel()
        return cls(ev, np.full(ev.size, 1.0 / ev.size))

    @property
    def inf_support(self) -> float:
        return float(self.values.min())

    @property
    def sup_support(self) -> float:
        return float(self.values.max())

    def strictly_positive(self) -> bool:
        return self.inf_support > 0.0


def moment(m: ScalarMeasure, k: int) -> float:
    """k-th moment ``sum_i w_i lambda_i^k``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return float(np.dot(m.weights, m.values**k))


def expect_rational(m: ScalarMeasure, p: int, q: int, gamma: float, x: float) -> float:
    """``E[lambda^p / (gamma - x*lambda)^q]`` on the atoms of ``m``.

    Raises ``PoleHit`` when any denominator is within ``1e-14 * max(|gamma|, 1)``
    of zero; callers are expected to bracket away from poles.
    """
    if q == 0:
        return moment(m, p)
    denom = gamma - x * m.values
    if np.any(np.abs(denom) < 1e-14 * max(abs(gamma), 1.0)):
        raise PoleHit(f"gamma={gamma} x={x} touches an atom of the measure")
    return float(np.dot(m.weights, m.values**p / denom**q))


def _gauss_nodes(variance: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights integrating E[f(Z)] for Z ~ N(0, variance) exactly on
    polynomials of degree <= 2n-1."""
    x, w = hermgauss(n)
    return x * math.sqrt(2.0 * variance), w / math.sqrt(math.pi)


def _poisson_pmf(y: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Poisson pmf, vectorized and safe at mu == 0."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    out = np.zeros(np.broadcast_shapes(y.shape, mu.shape))
    y_b = np.broadcast_to(y, out.shape)
    mu_b = np.broadcast_to(mu, out.shape)
    pos = mu_b > 0
    out[pos] = np.exp(
        y_b[pos] * np.log(mu_b[pos]) - mu_b[pos] - gammaln(y_b[pos] + 1.0)
    )
    out[(~pos) & (y_b == 0)] = 1.0
    return out


@dataclass(frozen=True)
class ObservationLaw:
    """Joint quadrature law of (G, Y) with G ~ N(0, g_variance), Y = q(G, eps).

    ``grid_g / grid_y / grid_w`` is a flattened discretization of the joint
    law: every expectation E[h(G, Y)] is ``sum_j grid_w[j] * h(grid_g[j],
    grid_y[j])``.  For integer-valued outputs the grid runs over
    (g node) x (y = 0..y_max) weighted by the conditional pmf.
    """

    kind: str
    params: dict
    g_variance: float
    output_kind: str            # "continuous" | "nonneg-integer"
    deterministic: bool
    g_nodes: np.ndarray = field(repr=False)
    g_weights: np.ndarray = field(repr=False)
    noise_nodes: np.ndarray = field(repr=False)
    noise_weights: np.ndarray = field(repr=False)
    grid_g: np.ndarray = field(repr=False)
    grid_y: np.ndarray = field(repr=False)
    grid_w: np.ndarray = field(repr=False)
    y_max: int | None = None

    @property
    def sigma(self) -> float:
        return float(self.params.get("sigma", 0.0))

    def support_probe(self) -> np.ndarray:
        """Representative points of supp(Y) (the quadrature y values)."""
        return np.unique(self.grid_y)


def observation_law(
    kind: str,
    params: dict | None,
    g_variance: float,
    *,
    g_nodes: int = G_NODES_DEFAULT,
    noise_nodes: int = NOISE_NODES_DEFAULT,
) -> ObservationLaw:
    """Build the quadrature representation of (G, Y) for a named link."""
    if kind not in LINK_KINDS:
        raise UnsupportedLink(f"unknown link kind {kind!r}")
    if g_variance <= 0:
        raise ValueError("g_variance must be positive")
    params = dict(params or {})
    gx, gw = _gauss_nodes(g_variance, g_nodes)

    if kind == "poisson":
        mu = gx**2
        mu_hat = float(mu.max())
        y_max = max(60, int(math.ceil(mu_hat + 12.0 * math.sqrt(mu_hat))))
        ys = np.arange(y_max + 1, dtype=float)
        pmf = _poisson_pmf(ys[None, :], mu[:, None])        # (g, y)
        row_tot = pmf.sum(axis=1)
        if np.any(np.abs(row_tot - 1.0) > 1e-10):
            raise NonFinite("Poisson pmf truncation lost mass beyond 1e-10")
        grid_w = (gw[:, None] * pmf).ravel()
        grid_g = np.repeat(gx, ys.size)
        grid_y = np.tile(ys, gx.size)
        return ObservationLaw(
            kind=kind, params=params, g_variance=g_variance,
            output_kind="nonneg-integer", deterministic=False,
            g_nodes=gx, g_weights=gw,
            noise_nodes=np.zeros(0), noise_weights=np.zeros(0),
            grid_g=grid_g, grid_y=grid_y, grid_w=grid_w, y_max=y_max,
        )

    sigma = float(params.get("sigma", 0.0))
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    base = _DETERMINISTIC_BASES[kind]
    if kind == "phase_retrieval_noiseless" or sigma == 0.0:
        return ObservationLaw(
            kind=kind, params=params, g_variance=g_variance,
            output_kind="continuous", deterministic=True,
            g_nodes=gx, g_weights=gw,
            noise_nodes=np.zeros(1), noise_weights=np.ones(1),
            grid_g=gx, grid_y=base(gx), grid_w=gw,
        )

    ex, ew = _gauss_nodes(sigma**2, noise_nodes)
    grid_g = np.repeat(gx, ex.size)
    grid_y = base(grid_g) + np.tile(ex, gx.size)
    grid_w = (gw[:, None] * ew[None, :]).ravel()
    return ObservationLaw(
        kind=kind, params=params, g_variance=g_variance,
        output_kind="continuous", deterministic=False,
        g_nodes=gx, g_weights=gw, noise_nodes=ex, noise_weights=ew,
        grid_g=grid_g, grid_y=grid_y, grid_w=grid_w,
    )


def expect_obs(law: ObservationLaw, h: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """E[h(G, Y)] by quadrature over the law's joint grid."""
    vals = np.asarray(h(law.grid_g, law.grid_y), dtype=float)
    vals = np.broadcast_to(vals, law.grid_w.shape)
    if not np.all(np.isfinite(vals)):
        raise NonFinite("integrand is not finite on the quadrature grid")
    return float(np.dot(law.grid_w, vals))


def _conditional_density(law: ObservationLaw, y: np.ndarray, g: np.ndarray) -> np.ndarray:
    """p(y | g) for links with a density/pmf evaluator; shape (len(y), len(g))."""
    y = y[:, None]
    g = g[None, :]
    sigma = law.sigma
    if law.kind == "linear":
        return _normpdf(y - g, sigma)
    if law.kind == "phase_retrieval_gaussian":
        return _normpdf(y - np.abs(g), sigma)
    if law.kind == "one_bit":
        return _normpdf(y - np.sign(g), sigma)
    if law.kind == "poisson":
        if np.any(np.abs(y - np.round(y)) > 1e-9) or np.any(y < 0):
            raise ValueError("poisson outputs are nonnegative integers")
        return _poisson_pmf(y, g**2)
    raise UnsupportedLink(f"no conditional density for link {law.kind!r}")


def _normpdf(x: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise UnsupportedLink("Gaussian density needs sigma > 0")
    return np.exp(-0.5 * (x / sigma) ** 2) / (sigma * math.sqrt(2.0 * math.pi))


def cond_moments(law: ObservationLaw, y) -> tuple[np.ndarray, np.ndarray]:
    """Conditional moments (m0, m2) of the observation channel at y.

    m0(y) = E[p(y | G)] is the marginal density/pmf of Y and
    m2(y) = E[p(y | G) G^2] / g_variance reweights it by the relative second
    moment of G.  Deterministic links are reduced analytically: conditioning
    on the observed value pins G^2, so no Dirac densities are ever formed.
    """
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    v = law.g_variance
    if law.deterministic:
        if law.kind in ("phase_retrieval_noiseless", "phase_retrieval_gaussian"):
            m0 = np.where(y_arr > 0, 2.0 * _gausspdf(y_arr, v), 0.0)
            m2 = m0 * y_arr**2 / v
        elif law.kind == "linear":
            m0 = _gausspdf(y_arr, v)
            m2 = m0 * y_arr**2 / v
        elif law.kind == "one_bit":
            m0 = np.where(np.abs(np.abs(y_arr) - 1.0) < 1e-12, 0.5, 0.0)
            m2 = m0.copy()   # E[G^2 | sign(G)] = v on either side
        else:
            raise UnsupportedLink(f"no analytic reduction for {law.kind!r}")
        return _match_shape(m0, y), _match_shape(m2, y)

    dens = _conditional_density(law, y_arr, law.g_nodes)      # (y, g)
    m0 = dens @ law.g_weights
    m2 = (dens * law.g_nodes[None, :] ** 2) @ law.g_weights / v
    return _match_shape(m0, y), _match_shape(m2, y)


def moment_ratio(law: ObservationLaw, y) -> np.ndarray:
    """m2(y) / m0(y), with the exact limit used wherever m0 vanishes.

    For deterministic links the ratio has a closed form (conditioning pins
    G^2), valid even at points of zero density.  Elsewhere the quadrature
    ratio is used; points where both moments underflow carry no weight and
    get the neutral value 1.
    """
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    if law.deterministic:
        if law.kind in ("phase_retrieval_noiseless", "phase_retrieval_gaussian",
                        "linear"):
            out = y_arr**2 / law.g_variance
        elif law.kind == "one_bit":
            out = np.ones_like(y_arr)
        else:
            raise UnsupportedLink(f"no analytic reduction for {law.kind!r}")
        return _match_shape(out, y)
    m0, m2 = cond_moments(law, y_arr)
    out = np.ones_like(m0)
    ok = m0 > 1e-250
    out[ok] = m2[ok] / m0[ok]
    return _match_shape(out, y)


def _gausspdf(x: np.ndarray, variance: float) -> np.ndarray:
    return np.exp(-0.5 * x**2 / variance) / math.sqrt(2.0 * math.pi * variance)


def _match_shape(out: np.ndarray, y_in) -> np.ndarray:
    if np.isscalar(y_in) or np.ndim(y_in) == 0:
        return out[0]
    return out
