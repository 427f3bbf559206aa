"""Asymptotic predictions for spectral estimators under correlated designs.

The engine solves a family of scalar self-consistent equations built from two
ingredients: the limiting covariance spectrum S (a ``ScalarMeasure``) and the
preprocessed observation channel, reduced to the triple

    (t_j, w0_j, w2_j)  with  w0_j = P(Y = y_j),  w2_j = E[G^2; Y = y_j],

where t_j = T(y_j) runs over the quadrature support of Y.  For a > sup T the
map F_a(y) = T(y) / (a - T(y)) defines, through the unique root gamma(a) of

    1 = (1/delta) E[ S / (gamma - E[F_a] S) ],

the outlier candidate curve  phi(a)  and the bulk curve  psi(a) = a gamma(a).
The largest critical point a_o of psi locates the right edge of the bulk
(lambda_2 = psi(a_o)); the largest crossing a_s of phi with the flattened
bulk curve zeta locates the outlier (lambda_1 = psi(a_s)) and feeds the
limiting overlap eta.  A spectral gap (and positive overlap) exists exactly
when a_s > a_o.

A parallel set of curves (phi_w, psi_w) describes the whitened estimator
computed from decorrelated covariates; both engines share the same root
finding machinery, so they coincide digit-for-digit when S is a point mass
at 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .errors import ADomain, BracketFail, InvariantViolation
from .measure import ObservationLaw, ScalarMeasure, moment, observation_law
from .preprocess import Preprocessor, threshold_cap

SCAN_POINTS = 4000
CROSS_POINTS = 2000
EXPAND_FACTOR = 2.0
EXPAND_BUDGET = 1e6
GAMMA_RESIDUAL = 1e-12
A_CIRC_TOL = 1e-10
A_STAR_TOL = 1e-9
ZERO_MEAN_F = 1e-13


@dataclass(frozen=True)
class TheoryContext:
    """Everything the solvers need, with the channel collapsed to atoms."""

    delta: float
    sigma: ScalarMeasure
    law: ObservationLaw
    preproc: Preprocessor
    mean_sigma: float
    t_sup: float
    # collapsed channel trace
    t_vals: np.ndarray = field(repr=False)
    w0: np.ndarray = field(repr=False)
    w2: np.ndarray = field(repr=False)

    @property
    def lam(self) -> np.ndarray:
        return self.sigma.values

    @property
    def wlam(self) -> np.ndarray:
        return self.sigma.weights


def build_context(delta: float, sigma: ScalarMeasure, law: ObservationLaw,
                  preproc: Preprocessor) -> TheoryContext:
    if not sigma.strictly_positive():
        raise ValueError("covariance spectrum must be strictly positive")
    mean_sigma = moment(sigma, 1)
    if abs(law.g_variance - mean_sigma / delta) > 1e-12 * max(1.0, mean_sigma / delta):
        raise ValueError(
            f"law.g_variance={law.g_variance!r} inconsistent with "
            f"E[S]/delta={mean_sigma / delta!r}")
    yu, inv = np.unique(law.grid_y, return_inverse=True)
    w0 = np.bincount(inv, weights=law.grid_w)
    w2 = np.bincount(inv, weights=law.grid_w * law.grid_g**2)
    t_vals = np.asarray(preproc(yu), dtype=float)
    return TheoryContext(
        delta=float(delta), sigma=sigma, law=law, preproc=preproc,
        mean_sigma=mean_sigma, t_sup=preproc.t_sup,
        t_vals=t_vals, w0=w0, w2=w2,
    )


# ---------------------------------------------------------------------------
# channel moments in a (vectorized over a)

def _check_domain(ctx: TheoryContext, a) -> None:
    if np.any(np.asarray(a) <= ctx.t_sup):
        raise ADomain(f"a={a} must exceed sup T = {ctx.t_sup:g}")


def _ef(ctx, a):
    """E[F_a(Y)]; a may be scalar or 1-d array."""
    a = np.asarray(a, dtype=float)
    f = ctx.t_vals[None, :] / (a.reshape(-1, 1) - ctx.t_vals[None, :])
    out = f @ ctx.w0
    return out if a.ndim else float(out[0])


def _eg2f(ctx, a):
    a = np.asarray(a, dtype=float)
    f = ctx.t_vals[None, :] / (a.reshape(-1, 1) - ctx.t_vals[None, :])
    out = f @ ctx.w2
    return out if a.ndim else float(out[0])


def _ef2(ctx, a):
    f = ctx.t_vals / (a - ctx.t_vals)
    return float((f * f) @ ctx.w0)


def _eg2f2(ctx, a):
    f = ctx.t_vals / (a - ctx.t_vals)
    return float((f * f) @ ctx.w2)


def _et_am2(ctx, a):
    """E[T / (a - T)^2], the a-derivative of -E[F_a]."""
    a = np.asarray(a, dtype=float)
    d = a.reshape(-1, 1) - ctx.t_vals[None, :]
    out = (ctx.t_vals[None, :] / (d * d)) @ ctx.w0
    return out if a.ndim else float(out[0])


def _rational(ctx, p, q, gamma, c):
    """E[S^p / (gamma - c S)^q] on the covariance spectrum."""
    return float(np.dot(ctx.wlam, ctx.lam**p / (gamma - c * ctx.lam) ** q))


# ---------------------------------------------------------------------------
# gamma(a): the resolvent normalization root

def s_of_a(ctx: TheoryContext, a: float) -> float:
    """Lower edge of the admissible gamma range at this a."""
    _check_domain(ctx, a)
    c = _ef(ctx, a)
    return _s_of_c(ctx, c)


def _s_of_c(ctx, c: float) -> float:
    if abs(c) < ZERO_MEAN_F:
        return 0.0
    return ctx.sigma.sup_support * c if c > 0 else ctx.sigma.inf_support * c


def _edge_atom_mass(ctx, c: float) -> float:
    """w * lambda for the spectrum atom generating the edge s(c)."""
    lam, wl = ctx.lam, ctx.wlam
    edge = ctx.sigma.sup_support if c > 0 else ctx.sigma.inf_support
    mask = np.abs(lam - edge) <= 1e-12 * max(1.0, abs(edge))
    return float(np.dot(wl[mask], lam[mask]))


def _gamma_bracket(ctx, c: float, s: float) -> tuple[float, float]:
    """Closed-form bracket for the resolvent normalization root.

    The mean map is sandwiched between the edge-atom term and E[S]/(g - s),
    so the root always lies in (s + m_edge/delta, s + E[S]/delta] up to
    margins; no expansion search is needed.
    """
    lo = s + 0.25 * _edge_atom_mass(ctx, c) / ctx.delta
    hi = s + ctx.mean_sigma / ctx.delta * (1.0 + 1e-9) + 1e-300
    return lo, hi


def _solve_gamma(ctx, c: float) -> float:
    """Unique root in (s, inf) of 1 = (1/delta) E[S/(gamma - c S)]."""
    if abs(c) < ZERO_MEAN_F:
        return ctx.mean_sigma / ctx.delta
    s = _s_of_c(ctx, c)
    scale = max(1.0, abs(s))

    def h(g):
        return _rational(ctx, 1, 1, g, c) / ctx.delta - 1.0

    lo, hi = _gamma_bracket(ctx, c, s)
    if not (h(lo) > 0 > h(hi)):
        raise BracketFail(f"gamma bracket invalid at c={c:g}")
    gamma = brentq(h, lo, hi, xtol=1e-15 * scale, rtol=8.9e-16, maxiter=300)
    if abs(h(gamma)) > GAMMA_RESIDUAL:
        raise BracketFail(f"gamma residual {h(gamma):.2e} above tolerance")
    return float(gamma)


def gamma_of_a(ctx: TheoryContext, a: float) -> float:
    _check_domain(ctx, a)
    return _solve_gamma(ctx, _ef(ctx, a))


def _gamma_vec(ctx, c_arr: np.ndarray, iters: int = 48) -> np.ndarray:
    """Lockstep bisection of the gamma equation for an array of E[F_a] values.

    Used only to locate sign changes on scan grids; refined roots always go
    through the scalar solver.  Brackets are the closed-form ones of
    ``_gamma_bracket``, evaluated elementwise.
    """
    lam, delta = ctx.lam, ctx.delta
    lmin, lmax = ctx.sigma.inf_support, ctx.sigma.sup_support
    c = np.asarray(c_arr, dtype=float)
    out = np.full(c.shape, ctx.mean_sigma / delta)
    live = np.abs(c) >= ZERO_MEAN_F
    if not np.any(live):
        return out
    cl = c[live]
    s = np.where(cl > 0, lmax * cl, lmin * cl)
    edge_mass = np.where(cl > 0, _edge_atom_mass(ctx, 1.0), _edge_atom_mass(ctx, -1.0))
    cl_lam = cl[:, None] * lam[None, :]
    lam_w = (ctx.wlam * lam) / delta

    lo = s + 0.25 * edge_mass / delta
    hi = s + ctx.mean_sigma / delta * (1.0 + 1e-9)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        hval = (1.0 / (mid[:, None] - cl_lam)) @ lam_w - 1.0
        pos = hval > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    out[live] = 0.5 * (lo + hi)
    return out


# ---------------------------------------------------------------------------
# the outlier / bulk curves

def phi(ctx: TheoryContext, a: float) -> float:
    _check_domain(ctx, a)
    c = _ef(ctx, a)
    gamma = _solve_gamma(ctx, c)
    return a / ctx.mean_sigma * _eg2f(ctx, a) * _rational(ctx, 2, 1, gamma, c)


def psi(ctx: TheoryContext, a: float) -> float:
    return a * gamma_of_a(ctx, a)


def _gamma_prime(ctx, a: float, gamma: float, c: float) -> float:
    return -_et_am2(ctx, a) * _rational(ctx, 2, 2, gamma, c) / _rational(ctx, 1, 2, gamma, c)


def psi_prime(ctx: TheoryContext, a: float) -> float:
    """d/da [a gamma(a)], via implicit differentiation of the gamma equation."""
    _check_domain(ctx, a)
    c = _ef(ctx, a)
    gamma = _solve_gamma(ctx, c)
    return gamma + a * _gamma_prime(ctx, a, gamma, c)


def _psi_prime_vec(ctx, a_arr: np.ndarray) -> np.ndarray:
    a = np.asarray(a_arr, dtype=float)
    c = _ef(ctx, a)
    gamma = _gamma_vec(ctx, c)
    lam, wl = ctx.lam, ctx.wlam
    denom = gamma[:, None] - c[:, None] * lam[None, :]
    r22 = ((lam**2)[None, :] / denom**2) @ wl
    r12 = (lam[None, :] / denom**2) @ wl
    return gamma - a * _et_am2(ctx, a) * r22 / r12


def _psi_vec(ctx, a_arr: np.ndarray) -> np.ndarray:
    a = np.asarray(a_arr, dtype=float)
    return a * _gamma_vec(ctx, _ef(ctx, a))


def _phi_minus_psi(ctx, a: float) -> float:
    c = _ef(ctx, a)
    gamma = _solve_gamma(ctx, c)
    return a / ctx.mean_sigma * _eg2f(ctx, a) * _rational(ctx, 2, 1, gamma, c) - a * gamma


def _phi_minus_psi_vec(ctx, a_arr: np.ndarray) -> np.ndarray:
    a = np.asarray(a_arr, dtype=float)
    c = _ef(ctx, a)
    gamma = _gamma_vec(ctx, c)
    f = ctx.t_vals[None, :] / (a[:, None] - ctx.t_vals[None, :])
    eg2f = f @ ctx.w2
    denom = gamma[:, None] - c[:, None] * ctx.lam[None, :]
    r21 = ((ctx.lam**2)[None, :] / denom) @ ctx.wlam
    return a / ctx.mean_sigma * eg2f * r21 - a * gamma


# ---------------------------------------------------------------------------
# generic scan helpers (shared by the correlated and whitened engines)

def _offset_grid(t_sup: float, a_lo: float, a_hi: float, n: int) -> np.ndarray:
    return t_sup + np.geomspace(a_lo - t_sup, a_hi - t_sup, n)


def _scale_hint(psi_fn, a_lo: float, a_hi: float) -> float:
    mid = math.sqrt((a_lo) * (a_hi)) if a_lo > 0 else 0.5 * (a_lo + a_hi)
    try:
        return max(1.0, abs(psi_fn(mid)))
    except Exception:
        return 1.0


def _largest_sign_change_root(f_scalar, f_vec, t_sup: float, n_points: int,
                              tol_abs: float):
    """Largest root of f on (t_sup, inf), where f -> positive limit at inf.

    Returns (root, scanned_grid, values, pinned).  ``pinned`` means f had no
    sign change: f > 0 throughout, and the left grid edge is returned.
    """
    a_lo = t_sup * (1.0 + 1e-8) + 1e-10
    budget = t_sup + EXPAND_BUDGET * max(1.0, abs(t_sup))
    a_hi = t_sup + max(1.0, abs(t_sup))
    for _ in range(200):
        if a_hi >= budget or f_scalar(a_hi) > 0:
            break
        a_hi = t_sup + (a_hi - t_sup) * EXPAND_FACTOR
    else:
        raise BracketFail("scan upper edge expansion exhausted")
    grid = _offset_grid(t_sup, a_lo, a_hi, n_points)
    vals = f_vec(grid)
    if not np.all(np.isfinite(vals)):
        raise BracketFail("scan produced non-finite values")
    roots = []
    flips = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    for i in flips:
        lo, hi = grid[i], grid[i + 1]
        flo, fhi = f_scalar(lo), f_scalar(hi)
        if flo == 0.0:
            roots.append(lo)
            continue
        if flo * fhi > 0:
            continue
        roots.append(brentq(f_scalar, lo, hi, xtol=1e-13 * max(1.0, hi),
                            rtol=8.9e-16, maxiter=300))
    roots.extend(grid[vals == 0.0])
    if not roots:
        return a_lo, grid, vals, True
    root = max(roots)
    if abs(f_scalar(root)) > tol_abs:
        raise BracketFail(f"refined root residual {f_scalar(root):.2e} > {tol_abs:.2e}")
    return float(root), grid, vals, False


def _rightmost_crossing(g_scalar, g_vec, a_start: float, t_sup: float,
                        tol_abs: float):
    """Largest root of g on (a_start, inf) given g(a_start+) > 0 and
    g -> -inf; scans a geometric grid, then refines the rightmost flip."""
    budget = t_sup + EXPAND_BUDGET * max(1.0, abs(t_sup))
    a_hi = a_start + max(1.0, abs(a_start))
    for _ in range(200):
        if g_scalar(a_hi) < 0:
            break
        if a_hi >= budget:
            raise BracketFail("no sign change of the outlier equation below the budget")
        a_hi = a_start + (a_hi - a_start) * EXPAND_FACTOR
    else:
        raise BracketFail("outlier bracket expansion exhausted")
    lo_off = max(a_start * 1e-12, 1e-12)
    grid = a_start + np.geomspace(lo_off, a_hi - a_start, CROSS_POINTS)
    vals = np.asarray(g_vec(grid))
    flips = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    candidates = []
    for i in flips:
        lo, hi = grid[i], grid[i + 1]
        if g_scalar(lo) * g_scalar(hi) > 0:
            continue
        candidates.append(brentq(g_scalar, lo, hi, xtol=1e-13 * max(1.0, hi),
                                 rtol=8.9e-16, maxiter=300))
    if not candidates:
        # grid too coarse for a genuine crossing; fall back to the bracket ends
        candidates.append(brentq(g_scalar, a_start + lo_off, a_hi,
                                 xtol=1e-13 * max(1.0, a_hi), rtol=8.9e-16,
                                 maxiter=300))
    root = max(candidates)
    if abs(g_scalar(root)) > tol_abs:
        raise BracketFail(f"outlier residual {g_scalar(root):.2e} > {tol_abs:.2e}")
    return float(root), candidates


# ---------------------------------------------------------------------------
# result types

@dataclass(frozen=True)
class CriticalPoints:
    a_circ: float
    gamma_circ: float
    a_star: float | None
    gamma_star: float | None
    supercritical: bool
    a_circ_pinned: bool = False
    a_star_candidates: tuple = ()


@dataclass(frozen=True)
class TheoryResult:
    lambda1: float
    lambda2: float
    eta: float
    w1: float | None
    w2: float | None
    z1: float | None
    z2: float | None
    gamma_sharp: float | None
    critical_points: CriticalPoints

    @property
    def supercritical(self) -> bool:
        return self.critical_points.supercritical


@dataclass(frozen=True)
class WhitenedTheoryResult:
    a_circ_k: float
    a_star_k: float | None
    lambda1_k: float
    lambda2_k: float
    eta_k: float
    supercritical_k: bool


@dataclass(frozen=True)
class ThresholdResult:
    delta_cap: float
    fixed_point_delta: float | None
    information: float


# ---------------------------------------------------------------------------
# bulk edge and outlier location

def find_a_circ(ctx: TheoryContext) -> tuple[float, float, bool]:
    """Largest critical point of psi and its gamma; the bulk edge is
    psi(a_circ).  Returns (a_circ, gamma_circ, pinned); ``pinned`` flags the
    degenerate case where psi' > 0 on the whole scan and the left grid edge
    was used instead of a genuine critical point."""
    a_lo = ctx.t_sup * (1.0 + 1e-8) + 1e-10
    scale = _scale_hint(lambda a: psi(ctx, a), a_lo,
                        ctx.t_sup + max(1.0, abs(ctx.t_sup)))
    root, _, _, pinned = _largest_sign_change_root(
        lambda a: psi_prime(ctx, a), lambda a: _psi_prime_vec(ctx, a),
        ctx.t_sup, SCAN_POINTS, A_CIRC_TOL * scale)
    gamma_circ = gamma_of_a(ctx, root)
    if not pinned:
        c = _ef(ctx, root)
        resid = 1.0 - _ef2(ctx, root) / ctx.delta * _rational(ctx, 2, 2, gamma_circ, c)
        if abs(resid) > 1e-8:
            raise InvariantViolation(
                f"bulk-edge self-consistency residual {resid:.2e} at a_circ={root:.6g}")
    return root, gamma_circ, pinned


def zeta(ctx: TheoryContext, a: float, a_circ: float) -> float:
    """psi flattened to the left of the bulk critical point."""
    _check_domain(ctx, a)
    return psi(ctx, max(a, a_circ))


def find_a_star(ctx: TheoryContext, a_circ: float,
                gamma_circ: float) -> tuple[float, float] | None:
    """Largest crossing of phi with the flattened bulk curve, or None when
    the configuration is subcritical (no spectral gap, zero overlap)."""
    psi_circ = a_circ * gamma_circ
    if phi(ctx, a_circ) <= psi_circ:
        return None
    scale = max(1.0, abs(psi_circ))
    a_star, _ = _rightmost_crossing(lambda a: _phi_minus_psi(ctx, a),
                                    lambda a: _phi_minus_psi_vec(ctx, a),
                                    a_circ, ctx.t_sup, A_STAR_TOL * scale)
    return a_star, gamma_of_a(ctx, a_star)


def overlap_params(ctx: TheoryContext, a_star: float, gamma_star: float) -> dict:
    """Ancillary parameters and the limiting overlap at the outlier point."""
    c = _ef(ctx, a_star)
    ms = ctx.mean_sigma
    ef2 = _ef2(ctx, a_star)
    eg2f2 = _eg2f2(ctx, a_star)
    r21 = _rational(ctx, 2, 1, gamma_star, c)
    r11 = _rational(ctx, 1, 1, gamma_star, c)
    r12 = _rational(ctx, 1, 2, gamma_star, c)
    z1 = _rational(ctx, 3, 2, gamma_star, c)
    z2 = _rational(ctx, 2, 2, gamma_star, c)
    centered_f2 = ctx.delta / ms * eg2f2 - ef2   # E[((delta/E S) G^2 - 1) F^2]
    w1 = centered_f2 / (ctx.delta * ms) * r21**2 + ef2 / ctx.delta * z1
    w2 = ef2 / ctx.delta * z2
    if w2 >= 1.0 or w1 <= 0.0:
        raise InvariantViolation(
            f"supercritical point produced w1={w1:.6g}, w2={w2:.6g}")
    if r21**2 > ms * z1 * (1.0 + 1e-12):
        raise InvariantViolation("Cauchy-Schwarz guard failed on the spectrum moments")
    eta = math.sqrt((1.0 - w2) * r11**2 / ((1.0 - w2) * z2 + w1 * r12))
    gamma_sharp = _solve_gamma_sharp(ctx, c, ef2)
    return {
        "w1": w1, "w2": w2, "z1": z1, "z2": z2, "eta": eta,
        "lambda1": a_star * gamma_star, "gamma_sharp": gamma_sharp,
        "r21": r21, "r11": r11, "r12": r12, "centered_f2": centered_f2,
        "ef2": ef2, "eg2f2": eg2f2, "c": c,
    }


def _solve_gamma_sharp(ctx, c: float, ef2: float) -> float:
    """Unique root of 1 = (1/delta) E[F^2] E[S^2/(gamma - cS)^2]."""
    s = _s_of_c(ctx, c)
    scale = max(1.0, abs(s))

    def h(g):
        return ef2 / ctx.delta * _rational(ctx, 2, 2, g, c) - 1.0

    lo = s + 1e-12 * scale
    for _ in range(40):
        if h(lo) > 0:
            break
        lo = s + (lo - s) / 1e3
    hi = s + max(1.0, abs(s))
    for _ in range(200):
        if h(hi) < 0:
            break
        hi = s + (hi - s) * EXPAND_FACTOR
    else:
        raise BracketFail("gamma_sharp bracket expansion exhausted")
    return float(brentq(h, lo, hi, xtol=1e-15 * scale, rtol=8.9e-16, maxiter=300))


def predict(ctx: TheoryContext) -> TheoryResult:
    """Full asymptotic characterization: top two eigenvalues and overlap."""
    a_circ, gamma_circ, pinned = find_a_circ(ctx)
    lambda2 = a_circ * gamma_circ
    star = find_a_star(ctx, a_circ, gamma_circ)
    if star is None:
        cp = CriticalPoints(a_circ, gamma_circ, None, None, False, pinned)
        return TheoryResult(lambda1=lambda2, lambda2=lambda2, eta=0.0,
                            w1=None, w2=None, z1=None, z2=None,
                            gamma_sharp=None, critical_points=cp)
    a_star, gamma_star = star
    frag = overlap_params(ctx, a_star, gamma_star)
    cp = CriticalPoints(a_circ, gamma_circ, a_star, gamma_star,
                        supercritical=a_star > a_circ + 1e-9,
                        a_circ_pinned=pinned)
    if not cp.supercritical:
        return TheoryResult(lambda1=lambda2, lambda2=lambda2, eta=0.0,
                            w1=None, w2=None, z1=None, z2=None,
                            gamma_sharp=None,
                            critical_points=replace(cp, supercritical=False))
    return TheoryResult(
        lambda1=frag["lambda1"], lambda2=lambda2, eta=frag["eta"],
        w1=frag["w1"], w2=frag["w2"], z1=frag["z1"], z2=frag["z2"],
        gamma_sharp=frag["gamma_sharp"], critical_points=cp,
    )


# ---------------------------------------------------------------------------
# whitened estimator theory

def _psi_w(ctx, a):
    return a * (1.0 / ctx.delta + _ef(ctx, a))


def _psi_w_prime_scalar(ctx, a):
    return 1.0 / ctx.delta + _ef(ctx, a) - a * _et_am2(ctx, a)


def _psi_w_prime_vec(ctx, a_arr):
    a = np.asarray(a_arr, dtype=float)
    return 1.0 / ctx.delta + _ef(ctx, a) - a * _et_am2(ctx, a)


def _phi_w(ctx, a):
    return a * ctx.delta / ctx.mean_sigma * _eg2f(ctx, a)


def whitened_theory(ctx: TheoryContext) -> WhitenedTheoryResult:
    """Predictions for the estimator computed from decorrelated covariates:
    same channel trace, but the bulk curve is a (1/delta + E[F_a]) and the
    outlier curve is (a delta / E[S]) E[G^2 F_a]."""
    a_lo = ctx.t_sup * (1.0 + 1e-8) + 1e-10
    scale = _scale_hint(lambda a: _psi_w(ctx, a), a_lo,
                        ctx.t_sup + max(1.0, abs(ctx.t_sup)))
    a_circ, _, _, pinned = _largest_sign_change_root(
        lambda a: _psi_w_prime_scalar(ctx, a),
        lambda a: _psi_w_prime_vec(ctx, a),
        ctx.t_sup, SCAN_POINTS, A_CIRC_TOL * scale)
    lambda2 = _psi_w(ctx, a_circ)
    if _phi_w(ctx, a_circ) <= lambda2:
        return WhitenedTheoryResult(a_circ_k=a_circ, a_star_k=None,
                                    lambda1_k=lambda2, lambda2_k=lambda2,
                                    eta_k=0.0, supercritical_k=False)
    a_star, _ = _rightmost_crossing(
        lambda a: _phi_w(ctx, a) - _psi_w(ctx, a),
        lambda a: _phi_w(ctx, a) - _psi_w(ctx, a), a_circ, ctx.t_sup,
        A_STAR_TOL * max(1.0, abs(lambda2)))
    ef2 = _ef2(ctx, a_star)
    centered_f2 = ctx.delta / ctx.mean_sigma * _eg2f2(ctx, a_star) - ef2
    num = 1.0 - ctx.delta * ef2
    den = 1.0 + ctx.delta * centered_f2
    supercritical = a_star > a_circ + 1e-9
    if supercritical and (num <= 0.0 or den <= 0.0):
        raise InvariantViolation(
            f"whitened overlap radicand invalid: num={num:.6g} den={den:.6g}")
    if not supercritical:
        return WhitenedTheoryResult(a_circ_k=a_circ, a_star_k=None,
                                    lambda1_k=lambda2, lambda2_k=lambda2,
                                    eta_k=0.0, supercritical_k=False)
    return WhitenedTheoryResult(
        a_circ_k=a_circ, a_star_k=a_star,
        lambda1_k=_psi_w(ctx, a_star), lambda2_k=lambda2,
        eta_k=math.sqrt(num / den), supercritical_k=True,
    )


# ---------------------------------------------------------------------------
# optimal threshold

def optimal_threshold(sigma: ScalarMeasure, law: ObservationLaw, delta: float,
                      *, scan_lo: float = 1e-2, scan_hi: float = 1e2,
                      scan_points: int = 97) -> ThresholdResult:
    """The preprocessing-optimal spectral threshold cap Delta(delta) and the
    smallest fixed point of delta = Delta(delta) on a log grid."""
    from .preprocess import threshold_information

    info = threshold_information(law)
    cap = threshold_cap(sigma, law)
    mean_sigma = moment(sigma, 1)
    n_g = law.g_nodes.size
    n_e = max(law.noise_weights.size, 1)

    def cap_at(dlt: float) -> float:
        law_d = observation_law(law.kind, law.params, mean_sigma / dlt,
                                g_nodes=n_g, noise_nodes=n_e)
        return threshold_cap(sigma, law_d)

    grid = np.geomspace(scan_lo, scan_hi, scan_points)
    gap = np.array([d - cap_at(d) for d in grid])
    fixed = None
    flip = np.nonzero((gap[:-1] < 0) & (gap[1:] >= 0))[0]
    if flip.size:
        i = flip[0]
        fixed = float(brentq(lambda d: d - cap_at(d), grid[i], grid[i + 1],
                             xtol=1e-12, rtol=8.9e-16, maxiter=200))
    elif np.all(gap > 0):
        # threshold below the scanned range; the cap at the low edge is a
        # fixed point up to the scan resolution
        fixed = float(cap_at(scan_lo)) if cap_at(scan_lo) >= scan_lo * 0.999 else None
        if fixed is not None and abs(fixed - cap_at(fixed)) > 1e-9 * max(1.0, fixed):
            fixed = float(brentq(lambda d: d - cap_at(d), min(fixed * 0.5, scan_lo * 0.1),
                                 scan_lo, xtol=1e-12, rtol=8.9e-16, maxiter=200))
    return ThresholdResult(delta_cap=cap, fixed_point_delta=fixed, information=info)


# ---------------------------------------------------------------------------
# curve dumps (for offline figures)

def curve_grid(ctx: TheoryContext, n: int = 400,
               a_hi: float | None = None) -> dict[str, np.ndarray]:
    """Sample phi, psi, zeta on a geometric grid for plotting."""
    a_circ, gamma_circ, _ = find_a_circ(ctx)
    star = find_a_star(ctx, a_circ, gamma_circ)
    right = a_hi or 3.0 * max(a_circ, star[0] if star else a_circ,
                              ctx.t_sup + 1.0)
    grid = _offset_grid(ctx.t_sup, ctx.t_sup * (1 + 1e-6) + 1e-9, right, n)
    psis = _psi_vec(ctx, grid)
    phis = np.array([phi(ctx, a) for a in grid])
    zetas = np.where(grid >= a_circ, psis, a_circ * gamma_circ)
    return {"a": grid, "phi": phis, "psi": psis, "zeta": zetas,
            "a_circ": np.array([a_circ]),
            "a_star": np.array([star[0]] if star else [np.nan])}
