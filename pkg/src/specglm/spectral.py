"""Finite-dimensional spectral estimation and empirical overlaps.

``build_D`` forms the data matrix sum_i x_i x_i^T T(y_i); the estimator is
its leading unit eigenvector.  The whitened variant decorrelates the design
first and maps the eigenvector back through Sigma^{-1/2}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import ConvergenceFail
from .model import Dataset
from .preprocess import Preprocessor

DENSE_LIMIT = 2500


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class EstimateReport:
    lambda1_emp: float
    lambda2_emp: float
    overlap_emp: float
    whitened_overlap_emp: float | None
    seed: int
    n: int
    d: int
    delta: float
    preprocessor_id: str
    v1: np.ndarray = field(repr=False, default=None)


def build_D(ds: Dataset, p: Preprocessor) -> np.ndarray:
    """X^T diag(T(y)) X, symmetrized against roundoff."""
    t = p(ds.y)
    D = ds.X.T @ (t[:, None] * ds.X)
    return 0.5 * (D + D.T)


def _fix_sign(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def top2_eigs(D: np.ndarray) -> tuple[EigenPair, EigenPair]:
    """The two algebraically largest eigenpairs of a symmetric matrix.

    Dense solve up to DENSE_LIMIT; Lanczos (with a dense fallback on
    convergence trouble) above it.
    """
    D = np.asarray(D)
    d = D.shape[0]
    if D.shape[0] != D.shape[1]:
        raise ValueError("D must be square")
    asym = float(np.max(np.abs(D - D.T))) if d <= 4000 else 0.0
    if asym > 1e-10 * max(1.0, float(np.max(np.abs(D)))):
        raise ValueError(f"D is not symmetric (max asymmetry {asym:.2e})")
    if d == 1:
        v = np.array([1.0])
        pair = EigenPair(float(D[0, 0]), v)
        return pair, pair
    if d <= DENSE_LIMIT:
        vals, vecs = scipy.linalg.eigh(D, subset_by_index=[d - 2, d - 1])
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
    else:
        try:
            vals, vecs = scipy.sparse.linalg.eigsh(D, k=2, which="LA",
                                                   maxiter=5000, tol=0)
        except scipy.sparse.linalg.ArpackNoConvergence as e:
            raise ConvergenceFail("Lanczos did not converge") from e
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        # power-iteration cross-check on the leading pair
        w = vecs[:, 0]
        for _ in range(3):
            w = D @ w
            w /= np.linalg.norm(w)
        if abs(abs(w @ vecs[:, 0]) - 1.0) > 1e-6:
            raise ConvergenceFail("Lanczos leading eigenvector failed the "
                                  "power-iteration cross-check")
    scale = max(1.0, float(np.abs(vals).max()))
    for i in range(2):
        resid = np.linalg.norm(D @ vecs[:, i] - vals[i] * vecs[:, i])
        if resid > 1e-8 * max(scale, float(np.linalg.norm(D, 2)) if d <= 800 else scale):
            raise ConvergenceFail(f"eigen residual {resid:.2e} too large")
    return (EigenPair(float(vals[0]), _fix_sign(vecs[:, 0])),
            EigenPair(float(vals[1]), _fix_sign(vecs[:, 1])))


def overlap(u: np.ndarray, v: np.ndarray) -> float:
    """|<u, v>| / (||u|| ||v||)."""
    return float(abs(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def spectral_estimate(ds: Dataset, p: Preprocessor) -> EstimateReport:
    """Leading eigenvector of D and its overlap with the true parameter."""
    top, second = top2_eigs(build_D(ds, p))
    return EstimateReport(
        lambda1_emp=top.value, lambda2_emp=second.value,
        overlap_emp=overlap(top.vector, ds.beta_star),
        whitened_overlap_emp=None, seed=ds.seed, n=ds.n, d=ds.d,
        delta=ds.delta, preprocessor_id=p.label, v1=top.vector,
    )


def whitened_estimate(ds: Dataset, p: Preprocessor) -> EstimateReport:
    """Estimate from decorrelated covariates X Sigma^{-1/2}: the leading
    eigenvector is mapped back through Sigma^{-1/2} before the overlap."""
    Xw = ds.whitened_design()
    t = p(ds.y)
    Dk = Xw.T @ (t[:, None] * Xw)
    Dk = 0.5 * (Dk + Dk.T)
    top, second = top2_eigs(Dk)
    beta_hat = ds.cov.inv_sqrt @ top.vector
    return EstimateReport(
        lambda1_emp=top.value, lambda2_emp=second.value,
        overlap_emp=overlap(top.vector, ds.beta_star),
        whitened_overlap_emp=overlap(beta_hat, ds.beta_star),
        seed=ds.seed, n=ds.n, d=ds.d, delta=ds.delta,
        preprocessor_id=p.label, v1=top.vector,
    )
