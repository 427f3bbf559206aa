"""Experiment harness: delta sweeps, theory tables, thresholds, SE checks.

Configs are JSON documents; command-line flags override file keys.  Outputs
are plot-ready CSV files with a '#'-prefixed provenance header (config hash,
seed, version), written in deterministic row order regardless of worker
scheduling.  Exit codes: 0 success, 2 solver failure, 3 config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, gamp, spectral, theory
from .errors import ConfigError, SpecGlmError
from .measure import ScalarMeasure, moment, observation_law
from .model import Covariance, CovarianceSpec, LinkModel, build_covariance, sample_dataset
from .preprocess import Preprocessor, make_preprocessor

SWEEP_COLUMNS = (
    "delta", "preprocessor", "trial", "overlap_emp", "lambda1_emp",
    "lambda2_emp", "overlap_theory", "lambda1_theory", "lambda2_theory",
    "supercritical", "runtime_ms",
)
WHITENED_COLUMNS = ("whitened_overlap_emp", "whitened_overlap_theory",
                    "whitened_lambda1_theory", "whitened_lambda2_theory")


@dataclass(frozen=True)
class ExperimentConfig:
    covariance: CovarianceSpec
    link: LinkModel
    prior: str
    preprocessors: tuple       # of (kind, params) pairs
    deltas: tuple
    trials: int
    seed: int
    out: str | None
    whitened: bool
    gamp_check: bool
    gamp_t_max: int
    workers: int
    threshold_scan: tuple      # (lo, hi, points)
    raw: dict = field(repr=False, default=None)

    @property
    def d(self) -> int:
        return self.covariance.d


def _cov_spec_from(obj: dict) -> CovarianceSpec:
    kind = obj.get("kind")
    d = int(obj.get("d", 0))
    try:
        if kind == "toeplitz":
            return CovarianceSpec.toeplitz(d, float(obj["rho"]))
        if kind == "circulant":
            return CovarianceSpec.circulant(d, float(obj["c0"]),
                                            float(obj["c1"]), int(obj["ell"]))
        if kind == "identity":
            return CovarianceSpec.identity(d)
        if kind == "explicit":
            return CovarianceSpec.explicit(np.asarray(obj["matrix"], dtype=float))
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"bad covariance spec: {e}") from e
    raise ConfigError(f"unknown covariance kind {kind!r}")


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cov = _cov_spec_from(raw["covariance"])
        link_obj = raw.get("link", {"kind": "phase_retrieval_noiseless"})
        link = LinkModel(link_obj["kind"], float(link_obj.get("sigma", 0.0)))
        deltas = tuple(float(x) for x in raw["deltas"])
        if list(deltas) != sorted(set(deltas)):
            raise ConfigError("delta grid must be strictly increasing")
        trials = int(raw.get("trials", 1))
        if trials < 1:
            raise ConfigError("trials must be >= 1")
        pre = []
        for p in raw.get("preprocessors", [{"kind": "optimal_limit"}]):
            p = dict(p)
            kind = p.pop("kind")
            pre.append((kind, p))
        scan = raw.get("threshold_scan", [1e-2, 1e2, 97])
        cfg = ExperimentConfig(
            covariance=cov, link=link, prior=raw.get("prior", "spherical"),
            preprocessors=tuple(pre), deltas=deltas, trials=trials,
            seed=int(raw.get("seed", 0)), out=raw.get("out"),
            whitened=bool(raw.get("whitened", False)),
            gamp_check=bool(raw.get("gamp_check", False)),
            gamp_t_max=int(raw.get("gamp_t_max", 30)),
            workers=int(raw.get("workers", 1)),
            threshold_scan=(float(scan[0]), float(scan[1]), int(scan[2])),
            raw=raw,
        )
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"bad config: {e}") from e
    if not np.all(np.isfinite(deltas)) or any(x <= 0 for x in deltas):
        raise ConfigError("deltas must be finite and positive")
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path: str | Path, columns, rows, meta: dict,
              trailing_comments=()) -> None:
    lines = [f"# specglm v{__version__}"]
    lines += [f"# {k}: {v}" for k, v in meta.items()]
    lines.append(",".join(columns))
    lines += [",".join(_fmt(r[c]) for c in columns) for r in rows]
    lines += [f"# {c}" for c in trailing_comments]
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path: str | Path):
    """Parse a sweep/theory CSV back into dict rows (floats where possible)."""
    header, rows = None, []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        if header is None:
            header = line.split(",")
            continue
        vals = []
        for tok in line.split(","):
            try:
                vals.append(float(tok))
            except ValueError:
                vals.append(tok)
        rows.append(dict(zip(header, vals)))
    return rows


def trial_seed(master: int, p_idx: int, d_idx: int, trial: int) -> int:
    ss = np.random.SeedSequence(entropy=int(master),
                                spawn_key=(p_idx, d_idx, trial))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _build_point(cfg: ExperimentConfig, cov: Covariance, delta: float,
                 kind: str, params: dict):
    mean_sigma = moment(cov.measure, 1)
    law = cfg.link.law(mean_sigma / delta)
    params = dict(params)
    if kind == "optimal_threshold" and "delta_cap" not in params:
        params.setdefault("sigma_measure", cov.measure)
    pre = make_preprocessor(kind, params, law, delta)
    ctx = theory.build_context(delta, cov.measure, law, pre)
    return law, pre, ctx


def cmd_theory(cfg: ExperimentConfig, dump_curves: bool = False) -> int:
    cov = build_covariance(cfg.covariance)
    rows, curves = [], []
    for p_idx, (kind, params) in enumerate(cfg.preprocessors):
        for d_idx, delta in enumerate(cfg.deltas):
            law, pre, ctx = _build_point(cfg, cov, delta, kind, params)
            res = theory.predict(ctx)
            row = {
                "delta": delta, "preprocessor": pre.label,
                "a_circ": res.critical_points.a_circ,
                "a_star": res.critical_points.a_star if res.supercritical else float("nan"),
                "lambda1_theory": res.lambda1, "lambda2_theory": res.lambda2,
                "overlap_theory": res.eta, "supercritical": res.supercritical,
            }
            if cfg.whitened:
                w = theory.whitened_theory(ctx)
                row.update({
                    "whitened_overlap_theory": w.eta_k,
                    "whitened_lambda1_theory": w.lambda1_k,
                    "whitened_lambda2_theory": w.lambda2_k,
                    "whitened_supercritical": w.supercritical_k,
                })
            rows.append(row)
            print("  ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
            if dump_curves:
                curves.append((pre.label, delta, theory.curve_grid(ctx)))
    meta = {"command": "theory", "config_hash": config_hash(cfg), "seed": cfg.seed}
    if cfg.out:
        write_csv(cfg.out, list(rows[0].keys()), rows, meta)
    if dump_curves:
        stem = Path(cfg.out).with_suffix("") if cfg.out else Path("curves")
        for label, delta, grids in curves:
            safe = label.replace("(", "_").replace(")", "").replace(",", "_").replace("=", "")
            path = Path(f"{stem}_curves_{safe}_delta{delta:g}.csv")
            n = grids["a"].size
            crow = [{"a": grids["a"][i], "phi": grids["phi"][i],
                     "psi": grids["psi"][i], "zeta": grids["zeta"][i]}
                    for i in range(n)]
            write_csv(path, ["a", "phi", "psi", "zeta"], crow,
                      dict(meta, a_circ=grids["a_circ"][0], a_star=grids["a_star"][0]))
            print(f"curves written to {path}")
    return 0


def _run_trial(cfg, cov, pre, res, wres, delta, p_idx, d_idx, trial):
    t0 = time.perf_counter()
    n = int(round(delta * cfg.d))
    ds = sample_dataset(cov, cfg.link, n, trial_seed(cfg.seed, p_idx, d_idx, trial),
                        prior=cfg.prior)
    rep = spectral.spectral_estimate(ds, pre)
    row = {
        "delta": delta, "preprocessor": pre.label, "trial": trial,
        "overlap_emp": rep.overlap_emp, "lambda1_emp": rep.lambda1_emp,
        "lambda2_emp": rep.lambda2_emp, "overlap_theory": res.eta,
        "lambda1_theory": res.lambda1, "lambda2_theory": res.lambda2,
        "supercritical": res.supercritical,
        "runtime_ms": 0.0,
    }
    if cfg.whitened:
        wrep = spectral.whitened_estimate(ds, pre)
        row.update({
            "whitened_overlap_emp": wrep.whitened_overlap_emp,
            "whitened_overlap_theory": wres.eta_k,
            "whitened_lambda1_theory": wres.lambda1_k,
            "whitened_lambda2_theory": wres.lambda2_k,
        })
    row["runtime_ms"] = (time.perf_counter() - t0) * 1e3
    return row


def cmd_sweep(cfg: ExperimentConfig, dump_data: str | None = None) -> int:
    cov = build_covariance(cfg.covariance)
    columns = list(SWEEP_COLUMNS) + (list(WHITENED_COLUMNS) if cfg.whitened else [])
    rows, failures, summary = [], [], []
    for p_idx, (kind, params) in enumerate(cfg.preprocessors):
        for d_idx, delta in enumerate(cfg.deltas):
            try:
                law, pre, ctx = _build_point(cfg, cov, delta, kind, params)
                res = theory.predict(ctx)
                wres = theory.whitened_theory(ctx) if cfg.whitened else None
            except SpecGlmError as e:
                failures.append(f"delta={delta:g} {kind}: {e}")
                print(f"point failed: delta={delta:g} {kind}: {e}", file=sys.stderr)
                continue
            tasks = range(cfg.trials)
            if cfg.workers > 1:
                with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
                    point_rows = list(ex.map(
                        lambda t: _run_trial(cfg, cov, pre, res, wres, delta,
                                             p_idx, d_idx, t), tasks))
            else:
                point_rows = [_run_trial(cfg, cov, pre, res, wres, delta,
                                         p_idx, d_idx, t) for t in tasks]
            point_rows.sort(key=lambda r: r["trial"])
            rows.extend(point_rows)
            ov = np.array([r["overlap_emp"] for r in point_rows])
            summary.append(
                f"summary delta={delta:g} pre={pre.label} overlap="
                f"{ov.mean():.6f}+-{ov.std():.6f} theory={res.eta:.6f}")
            if dump_data:
                _dump_datasets(cfg, cov, pre, delta, p_idx, d_idx, dump_data)
    meta = {"command": "sweep", "config_hash": config_hash(cfg),
            "seed": cfg.seed, "d": cfg.d, "trials": cfg.trials}
    out = cfg.out or "sweep.csv"
    write_csv(out, columns, rows, meta, trailing_comments=summary)
    for line in summary:
        print(line)
    print(f"rows written to {out}")
    if failures:
        return 2
    return 0


def _dump_datasets(cfg, cov, pre, delta, p_idx, d_idx, out_dir):
    """Portable CSV dump of each trial's (X, beta, y)."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    for trial in range(cfg.trials):
        ds = sample_dataset(cov, cfg.link, int(round(delta * cfg.d)),
                            trial_seed(cfg.seed, p_idx, d_idx, trial),
                            prior=cfg.prior)
        stem = d / f"dataset_p{p_idx}_delta{delta:g}_trial{trial}"
        np.savetxt(f"{stem}_X.csv", ds.X, delimiter=",")
        np.savetxt(f"{stem}_beta.csv", ds.beta_star, delimiter=",")
        np.savetxt(f"{stem}_y.csv", ds.y, delimiter=",")


def cmd_threshold(cfg: ExperimentConfig) -> int:
    cov = build_covariance(cfg.covariance)
    mean_sigma = moment(cov.measure, 1)
    lo, hi, pts = cfg.threshold_scan
    rows = []
    fixed = None
    for delta in cfg.deltas:
        law = cfg.link.law(mean_sigma / delta)
        th = theory.optimal_threshold(cov.measure, law, delta,
                                      scan_lo=lo, scan_hi=hi, scan_points=pts)
        fixed = th.fixed_point_delta
        rows.append({"delta": delta, "delta_cap": th.delta_cap,
                     "fixed_point_delta": th.fixed_point_delta
                     if th.fixed_point_delta is not None else float("nan"),
                     "information": th.information})
        print(f"delta={delta:g}  cap={th.delta_cap:.10g}  "
              f"fixed_point={th.fixed_point_delta}")
    if cfg.out:
        write_csv(cfg.out, ["delta", "delta_cap", "fixed_point_delta",
                            "information"], rows,
                  {"command": "threshold", "config_hash": config_hash(cfg),
                   "seed": cfg.seed})
    return 0


def cmd_secheck(cfg: ExperimentConfig) -> int:
    cov = build_covariance(cfg.covariance)
    checks = []
    kind, params = cfg.preprocessors[0]
    delta = cfg.deltas[0]
    law, pre, ctx = _build_point(cfg, cov, delta, kind, params)
    res = theory.predict(ctx)
    if not res.supercritical:
        print(f"secheck needs a supercritical point; delta={delta:g} "
              f"{pre.label} is subcritical", file=sys.stderr)
        return 2
    gctx = gamp.make_gamp_context(ctx, res)
    fps = gamp.se_fixed_points(gctx)
    for name, fp in (("FP+", fps.fp_plus), ("FP-", fps.fp_minus),
                     ("FP0", fps.fp_zero)):
        s, drift = fp, 0.0
        for _ in range(50):
            s2 = gamp.se_step(gctx, s)
            drift += float(np.max(np.abs(s2.as_array() - s.as_array())))
            s = s2
        ok = drift < 1e-8
        checks.append(ok)
        print(f"{'PASS' if ok else 'FAIL'} fixed-point persistence {name}: "
              f"cumulative drift {drift:.3e} (tol 1e-8)")
    if cfg.gamp_check:
        n = int(round(delta * cfg.d))
        ds = sample_dataset(cov, cfg.link, n, trial_seed(cfg.seed, 0, 0, 0),
                            prior=cfg.prior)
        state = gamp.gamp_init(ds, gctx, fps, seed=cfg.seed)
        chi, sv = fps.fp_plus.chi, fps.fp_plus.sigma_v
        ms = ctx.mean_sigma
        norm_pred = chi**2 * ms + sv**2
        align_pred = chi * ms
        sqrt_beta = cov.sqrt @ ds.beta_star
        worst_norm = worst_align = 0.0
        for _ in range(10):
            state = gamp.gamp_step(state, ds, gctx)
            worst_norm = max(worst_norm,
                             abs(np.linalg.norm(state.v)**2 / cfg.d / norm_pred - 1))
            worst_align = max(worst_align,
                              abs(state.v @ sqrt_beta / cfg.d / align_pred - 1))
        ok = worst_norm < 0.05 and worst_align < 0.05
        checks.append(ok)
        print(f"{'PASS' if ok else 'FAIL'} GAMP-vs-SE at d={cfg.d}: "
              f"max norm dev {worst_norm:.3f}, max align dev {worst_align:.3f} (tol 0.05)")
        vhat, diag = gamp.run_power_surrogate(ds, gctx, t_max=cfg.gamp_t_max,
                                              seed=cfg.seed)
        rep = spectral.spectral_estimate(ds, pre)
        ov = float(abs(vhat @ rep.v1) / np.linalg.norm(vhat))
        ok = ov > 0.95
        checks.append(ok)
        print(f"{'PASS' if ok else 'FAIL'} power-surrogate alignment with v1(D): "
              f"{ov:.4f} (tol > 0.95); eigen residual {diag['eigen_residual']:.3f}")
    print("secheck:", "all passed" if all(checks) else "FAILURES PRESENT")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="specglm",
        description="Spectral estimators for GLMs with correlated designs: "
                    "theory, simulation sweeps, thresholds, SE checks.")
    parser.add_argument("command", choices=["theory", "sweep", "threshold",
                                            "secheck"])
    parser.add_argument("--config", required=True)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--dump-curves", action="store_true")
    parser.add_argument("--whitened", action="store_true")
    parser.add_argument("--dump-data", default=None)
    args = parser.parse_args(argv)
    overrides = {"seed": args.seed, "out": args.out, "workers": args.workers}
    if args.whitened:
        overrides["whitened"] = True
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    try:
        if args.command == "theory":
            return cmd_theory(cfg, dump_curves=args.dump_curves)
        if args.command == "sweep":
            return cmd_sweep(cfg, dump_data=args.dump_data)
        if args.command == "threshold":
            return cmd_threshold(cfg)
        return cmd_secheck(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    except SpecGlmError as e:
        print(f"solver error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
