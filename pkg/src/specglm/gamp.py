"""Message-passing power method and its deterministic state-evolution shadow.

The iteration applies a diagonal channel multiplier F = diag(F_a*(y_i)) on
the observation side and the resolvent-type map B = (gamma* I - c Sigma)^{-1}
Sigma on the parameter side, with Onsager memory corrections (b, c).  Run
from the informative fixed point it executes a power iteration for the
spectral matrix D up to an error term that vanishes with dimension; its
scalar statistics are tracked exactly by a five-parameter recursion
(mu, sigma_U, chi, sigma_V, gamma).

This module is a verification device: the initialization uses the true
parameter vector and is not a practical estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import BracketFail, InvariantViolation
from .model import Dataset
from .theory import (TheoryContext, TheoryResult, _ef, _eg2f2, _ef2,
                     _rational, _s_of_c, overlap_params, predict)

_STREAM_GAMP_INIT = 4


@dataclass(frozen=True)
class SEState:
    mu: float
    sigma_u: float
    chi: float
    sigma_v: float
    gamma: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.sigma_u, self.chi, self.sigma_v, self.gamma])


@dataclass(frozen=True)
class SEFixedPoints:
    fp_plus: SEState
    fp_minus: SEState
    fp_zero: SEState


@dataclass(frozen=True)
class GampContext:
    """Theory constants pinned at the outlier point a*."""

    ctx: TheoryContext
    a_star: float
    gamma_star: float
    c: float                   # E[F_a*(Y)]
    kappa: float               # E[((delta/E S) G^2 - 1) F]
    ef2: float                 # E[F^2]
    eg2f2: float               # E[G^2 F^2]
    fragments: dict = field(repr=False, default=None)

    @property
    def delta(self) -> float:
        return self.ctx.delta

    @property
    def mean_sigma(self) -> float:
        return self.ctx.mean_sigma


def make_gamp_context(ctx: TheoryContext, result: TheoryResult | None = None) -> GampContext:
    result = result if result is not None else predict(ctx)
    if not result.supercritical:
        raise InvariantViolation("message-passing verification needs a "
                                 "supercritical configuration")
    cp = result.critical_points
    a_star, gamma_star = cp.a_star, cp.gamma_star
    c = _ef(ctx, a_star)
    eg2f = None
    frag = overlap_params(ctx, a_star, gamma_star)
    kappa = ctx.delta / ctx.mean_sigma * _eg2f_scalar(ctx, a_star) - c
    return GampContext(ctx=ctx, a_star=a_star, gamma_star=gamma_star, c=c,
                       kappa=kappa, ef2=frag["ef2"], eg2f2=frag["eg2f2"],
                       fragments=frag)


def _eg2f_scalar(ctx, a):
    f = ctx.t_vals / (a - ctx.t_vals)
    return float(f @ ctx.w2)


def _solve_gamma_se(gctx: GampContext, chi: float, sigma_v: float) -> float:
    """Root of 1 = chi^2 E[S^3/(g - cS)^2] + sigma_v^2 E[S^2/(g - cS)^2]."""
    ctx, c = gctx.ctx, gctx.c
    s = _s_of_c(ctx, c)
    scale = max(1.0, abs(s))

    def h(g):
        return (chi * chi * _rational(ctx, 3, 2, g, c)
                + sigma_v * sigma_v * _rational(ctx, 2, 2, g, c) - 1.0)

    lo = s + 1e-12 * scale
    for _ in range(40):
        if h(lo) > 0:
            break
        lo = s + (lo - s) / 1e3
    else:
        raise BracketFail("state-evolution gamma bracket has no positive side")
    hi = s + max(1.0, abs(s))
    for _ in range(200):
        if h(hi) < 0:
            break
        hi = s + (hi - s) * 2.0
    else:
        raise BracketFail("state-evolution gamma bracket expansion exhausted")
    g = brentq(h, lo, hi, xtol=1e-15 * scale, rtol=8.9e-16, maxiter=300)
    if abs(h(g)) > 1e-12:
        raise BracketFail(f"state-evolution gamma residual {h(g):.2e}")
    return float(g)


def se_step(gctx: GampContext, s: SEState) -> SEState:
    """One sweep of the scalar recursion; all expectations on the cached
    spectrum/channel traces."""
    ctx, c = gctx.ctx, gctx.c
    ms, delta = gctx.mean_sigma, gctx.delta
    r21 = _rational(ctx, 2, 1, s.gamma, c)
    r32 = _rational(ctx, 3, 2, s.gamma, c)
    r22 = _rational(ctx, 2, 2, s.gamma, c)
    mu = r21 / ms * s.chi
    sigma_u2 = (r32 - r21**2 / ms) / delta * s.chi**2 + r22 / delta * s.sigma_v**2
    chi = gctx.kappa * mu
    sigma_v2 = gctx.eg2f2 * mu**2 + gctx.ef2 * sigma_u2
    gamma = _solve_gamma_se(gctx, chi, np.sqrt(sigma_v2))
    return SEState(mu=mu, sigma_u=float(np.sqrt(sigma_u2)), chi=chi,
                   sigma_v=float(np.sqrt(sigma_v2)), gamma=gamma)


def se_fixed_points(gctx: GampContext) -> SEFixedPoints:
    """Closed-form fixed points: the informative pair and the uninformative
    one at the secondary normalization root."""
    frag = gctx.fragments
    w1, w2, z1, z2 = frag["w1"], frag["w2"], frag["z1"], frag["z2"]
    r21 = frag["r21"]
    ms, delta = gctx.mean_sigma, gctx.delta
    denom = (1.0 - w2) * z1 + w1 * z2
    if denom <= 0 or w2 >= 1.0 or w1 <= 0:
        raise InvariantViolation("fixed-point system is not positive")
    chi = np.sqrt((1.0 - w2) / denom)
    sigma_v = np.sqrt(w1 / denom)
    mu = r21 / ms * chi
    rad = z1 - r21**2 / ms + z2 * gctx.eg2f2 * r21**2 / ms**2
    if rad <= 0:
        raise InvariantViolation("sigma_U radicand is not positive")
    sigma_u = np.sqrt(rad / (delta * denom))
    if 1.0 - mu**2 * ms <= 0:
        raise InvariantViolation("initialization variance 1 - mu^2 E[S] <= 0")
    gamma_sharp = frag["gamma_sharp"]
    sv0 = _rational(gctx.ctx, 2, 2, gamma_sharp, gctx.c) ** -0.5
    plus = SEState(float(mu), float(sigma_u), float(chi), float(sigma_v),
                   gctx.gamma_star)
    minus = SEState(-float(mu), float(sigma_u), -float(chi), float(sigma_v),
                    gctx.gamma_star)
    zero = SEState(0.0, 1.0 / np.sqrt(delta), 0.0, float(sv0), gamma_sharp)
    return SEFixedPoints(fp_plus=plus, fp_minus=minus, fp_zero=zero)


# ---------------------------------------------------------------------------
# finite-dimensional iteration

@dataclass
class GampState:
    v_tilde: np.ndarray          # current denoised parameter iterate
    u_tilde_prev: np.ndarray     # previous denoised observation iterate
    u_prev: np.ndarray | None    # previous raw observation iterate
    v: np.ndarray | None         # current raw parameter iterate
    t: int
    # cached per-dataset quantities
    Xw: np.ndarray = field(repr=False, default=None)
    F_diag: np.ndarray = field(repr=False, default=None)
    c_emp: float = 0.0
    b: float = 0.0
    b_coef: np.ndarray = field(repr=False, default=None)   # eigenbasis diag of B
    Q: np.ndarray = field(repr=False, default=None)


def _apply_eig(Q: np.ndarray, coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    return Q @ (coef * (Q.T @ x))


def gamp_init(ds: Dataset, gctx: GampContext, fp: SEFixedPoints,
              seed: int) -> GampState:
    """Oracle initialization at the informative fixed point.

    Uses the true parameter (verification only): v_tilde0 has unit typical
    norm and overlap mu with the rotated parameter."""
    mu = fp.fp_plus.mu
    if not mu > 0:
        raise InvariantViolation("oracle initialization requires mu > 0")
    d = ds.d
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_STREAM_GAMP_INIT,))
    w = np.random.Generator(np.random.Philox(ss)).standard_normal(d)
    v_tilde0 = mu * (ds.cov.sqrt @ ds.beta_star) + np.sqrt(1.0 - mu**2 * gctx.mean_sigma) * w
    lam = ds.cov.eigenvalues
    b_coef = lam / (gctx.gamma_star - gctx.c * lam)
    F_diag = np.asarray(gctx.ctx.preproc(ds.y), dtype=float)
    F_diag = F_diag / (gctx.a_star - F_diag)
    return GampState(
        v_tilde=v_tilde0, u_tilde_prev=np.zeros(ds.n), u_prev=None, v=None,
        t=0, Xw=ds.whitened_design(), F_diag=F_diag,
        c_emp=float(F_diag.mean()), b=float(b_coef.sum() / ds.n),
        b_coef=b_coef, Q=ds.cov.eigenvectors,
    )


def gamp_step(state: GampState, ds: Dataset, gctx: GampContext) -> GampState:
    """One message-passing sweep with Onsager corrections."""
    u = state.Xw @ state.v_tilde - state.b * state.u_tilde_prev
    u_tilde = state.F_diag * u
    v = state.Xw.T @ u_tilde - state.c_emp * state.v_tilde
    v_tilde = _apply_eig(state.Q, state.b_coef, v)
    return GampState(
        v_tilde=v_tilde, u_tilde_prev=u_tilde, u_prev=u, v=v, t=state.t + 1,
        Xw=state.Xw, F_diag=state.F_diag, c_emp=state.c_emp, b=state.b,
        b_coef=state.b_coef, Q=state.Q,
    )


def power_surrogate_vector(state: GampState, ds: Dataset,
                           gctx: GampContext) -> np.ndarray:
    """Sigma^{-1/2} B v^t: the direction that tracks the top eigenvector."""
    if state.v is None:
        raise ValueError("run at least one step before extracting the vector")
    lam = ds.cov.eigenvalues
    coef = state.b_coef / np.sqrt(lam)
    return _apply_eig(state.Q, coef, state.v)


def run_power_surrogate(ds: Dataset, gctx: GampContext, t_max: int = 30,
                        seed: int | None = None,
                        fp: SEFixedPoints | None = None):
    """Iterate for t_max sweeps; report the surrogate eigvector, the error
    norms per step, and the eigen-residual against the predicted outlier."""
    fp = fp if fp is not None else se_fixed_points(gctx)
    state = gamp_init(ds, gctx, fp, seed if seed is not None else ds.seed)
    e1, e2 = [], []
    v_prev, u_prev = None, None
    norms = []
    for _ in range(t_max):
        prev_u = state.u_prev
        prev_v = state.v
        state = gamp_step(state, ds, gctx)
        if prev_u is not None:
            e1.append(float(np.linalg.norm(state.u_prev - prev_u) / np.sqrt(ds.n)))
        if prev_v is not None:
            e2.append(float(np.linalg.norm(state.v - prev_v) / np.sqrt(ds.d)))
        norms.append(float(np.linalg.norm(state.v_tilde) ** 2 / ds.d))
    v_hat = power_surrogate_vector(state, ds, gctx)
    lam1 = gctx.a_star * gctx.gamma_star
    t_y = np.asarray(gctx.ctx.preproc(ds.y), dtype=float)
    Dv = ds.X.T @ (t_y * (ds.X @ v_hat))
    resid = float(np.linalg.norm(Dv - lam1 * v_hat) / (abs(lam1) * np.linalg.norm(v_hat)))
    diagnostics = {
        "e1": np.array(e1), "e2": np.array(e2),
        "v_tilde_norms": np.array(norms),
        "eigen_residual": resid, "lambda1_theory": lam1,
    }
    return v_hat, diagnostics
