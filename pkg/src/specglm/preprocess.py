"""Preprocessing functions T and the derived map F_a = T / (a - T).

Shipped kinds:

* ``optimal_threshold`` -- the threshold-optimal T*(y), built from the
  conditional moment ratio m2/m0 and the optimal threshold cap of the link.
* ``optimal_limit`` -- the near-threshold limit T(y) = 1 - m0(y)/m2(y),
  the form used in the synthetic experiments (clamped below at -K).
* ``trimming(K)`` -- rescaled square with trimming of large observations.
* ``subset(K)`` -- indicator of large observations.
* ``identity_trunc(K)`` -- rescaled identity with symmetric truncation.
* ``custom`` -- arbitrary bounded evaluator supplied by the caller.

Every built preprocessor records the support edges (t_inf, t_sup) of
T(Y); the theory solvers only ever evaluate F_a for a > t_sup.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ADomain, DegenerateLink, NonFinite
from .measure import ObservationLaw, ScalarMeasure, moment, moment_ratio

DEFAULT_CLAMP = 10.0
_PROBE_POINTS = 100_000

KINDS = (
    "optimal_threshold",
    "optimal_limit",
    "trimming",
    "subset",
    "identity_trunc",
    "custom",
)


@dataclass(frozen=True)
class Preprocessor:
    kind: str
    params: dict
    t_inf: float
    t_sup: float
    metadata: dict = field(repr=False)
    _fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __call__(self, y) -> np.ndarray:
        return self._fn(np.asarray(y, dtype=float))

    @property
    def label(self) -> str:
        shown = {k: v for k, v in self.params.items() if not callable(v)
                 and not isinstance(v, ScalarMeasure)}
        inner = ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in sorted(shown.items()) if v is not None)
        return f"{self.kind}({inner})" if inner else self.kind


def threshold_information(law: ObservationLaw) -> float:
    """The channel functional int (m2 - m0)^2 / m0 dy = E[(m2/m0 (Y) - 1)^2].

    This is the only place the observation law enters the optimal threshold.
    """
    yu, inv = np.unique(law.grid_y, return_inverse=True)
    r = np.atleast_1d(moment_ratio(law, yu))
    return float(np.dot(law.grid_w, (r[inv] - 1.0) ** 2))


def threshold_cap(sigma: ScalarMeasure, law: ObservationLaw) -> float:
    """Smallest aspect ratio above which some preprocessing opens a spectral
    gap: (E[S]^2 / E[S^2]) divided by the channel information."""
    info = threshold_information(law)
    if info < 1e-14:
        raise DegenerateLink("m2 == m0: no preprocessing is informative")
    return moment(sigma, 1) ** 2 / moment(sigma, 2) / info


def _moment_ratio_fn(law: ObservationLaw) -> Callable[[np.ndarray], np.ndarray]:
    return lambda y: np.atleast_1d(moment_ratio(law, y))


def _probe_points(law: ObservationLaw) -> np.ndarray:
    if law.output_kind == "nonneg-integer":
        return np.arange(law.y_max + 1, dtype=float)
    ys = law.support_probe()
    return np.linspace(ys.min(), ys.max(), _PROBE_POINTS)


def make_preprocessor(kind: str, params: dict | None, law: ObservationLaw,
                      delta: float) -> Preprocessor:
    """Build a named preprocessor against an observation law at aspect ratio
    ``delta``.  Scale conventions use sqrt(delta) |y| / sqrt(E[S]) =
    |y| / sqrt(g_variance)."""
    if kind not in KINDS:
        raise ValueError(f"unknown preprocessor kind {kind!r}")
    params = dict(params or {})
    v = law.g_variance
    root_v = np.sqrt(v)
    analytic: tuple[float, float] | None = None

    if kind == "subset":
        K = float(params["K"])
        fn = lambda y: (np.abs(y) / root_v >= K).astype(float)
        analytic = (0.0, 1.0)
    elif kind == "trimming":
        K = float(params["K"])
        fn = lambda y: (y * y / v) * (np.abs(y) / root_v <= K)
        analytic = (0.0, K * K)
    elif kind == "identity_trunc":
        K = float(params["K"])
        fn = lambda y: np.clip(y / root_v, -K, K)
        analytic = (-K, K)
    elif kind == "optimal_limit":
        clamp = params.setdefault("clamp", DEFAULT_CLAMP)
        ratio = _moment_ratio_fn(law)
        lo = -float(clamp) if clamp is not None else -np.inf

        def fn(y, _r=ratio, _lo=lo):
            r = _r(y)
            raw = np.where(np.isfinite(r) & (r > 0), 1.0 - 1.0 / np.maximum(r, 1e-300), _lo)
            return np.maximum(raw, _lo)

        if law.kind in ("phase_retrieval_noiseless", "phase_retrieval_gaussian",
                        "linear", "poisson"):
            analytic = (None, 1.0)     # ratio is unbounded along supp(Y)
    elif kind == "optimal_threshold":
        clamp = params.setdefault("clamp", DEFAULT_CLAMP)
        cap = params.get("delta_cap")
        if cap is None:
            sigma = params.get("sigma_measure")
            if sigma is None:
                raise ValueError(
                    "optimal_threshold needs params['sigma_measure'] or "
                    "params['delta_cap']")
            cap = threshold_cap(sigma, law)
            params["delta_cap"] = cap
        if cap >= delta:
            raise DegenerateLink(
                f"threshold-optimal preprocessing undefined: delta={delta:g} "
                f"is at or below the optimal threshold {cap:g}")
        s = np.sqrt(cap / delta)
        ratio = _moment_ratio_fn(law)
        lo = -float(clamp) if clamp is not None else -np.inf

        def fn(y, _r=ratio, _s=s, _lo=lo):
            r = _r(y)
            denom = _s * r + 1.0 - _s
            raw = np.where(np.isfinite(r) & (denom > 0), 1.0 - 1.0 / np.maximum(denom, 1e-300), _lo)
            return np.maximum(raw, _lo)
    else:   # custom
        user = params["fn"]
        fn = lambda y: np.asarray(user(y), dtype=float)
        if "t_inf" in params and "t_sup" in params:
            analytic = (float(params["t_inf"]), float(params["t_sup"]))

    probe = _probe_points(law)
    t_probe = fn(probe)
    if not np.all(np.isfinite(t_probe)):
        raise NonFinite(f"{kind} preprocessor is unbounded on the support probe")
    probed_inf = float(t_probe.min())
    probed_sup = float(t_probe.max())
    if analytic is None:
        t_inf, t_sup = probed_inf, probed_sup
    else:
        a_inf, a_sup = analytic
        t_inf = probed_inf if a_inf is None else a_inf
        t_sup = probed_sup if a_sup is None else a_sup
    if t_sup <= 0:
        if kind in ("optimal_limit", "optimal_threshold") and probed_sup - probed_inf < 1e-12:
            raise DegenerateLink("m2 == m0: optimal preprocessing vanishes")
        raise ValueError(f"{kind}: sup T(Y) = {t_sup:g} must be positive")
    if probed_sup > t_sup + 1e-9:
        raise NonFinite(f"{kind}: probed sup {probed_sup} exceeds recorded edge {t_sup}")

    meta = {
        "law_kind": law.kind, "law_params": dict(law.params),
        "delta": float(delta), "g_variance": v,
        "probed_inf": probed_inf, "probed_sup": probed_sup,
    }
    return Preprocessor(kind=kind, params=params, t_inf=t_inf, t_sup=t_sup,
                        metadata=meta, _fn=fn)


def f_a(p: Preprocessor, a: float, y) -> np.ndarray:
    """F_a(y) = T(y) / (a - T(y)); requires a above the support edge of T."""
    if a <= p.t_sup:
        raise ADomain(f"a={a:g} must exceed sup T = {p.t_sup:g}")
    t = p(y)
    return t / (a - t)


def t_support(p: Preprocessor, law: ObservationLaw) -> tuple[float, float]:
    """Support edges of T(Y): analytic when registered, probed otherwise."""
    return p.t_inf, p.t_sup
