"""Configuration, seeded trial execution, Monte Carlo aggregation and export."""
from __future__ import annotations

import csv
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from . import backend
from .diagnostics import GRID_RATIO, PhaseSnapshot, slope_fit, snapshot_from_arrays, snapshot_grid
from .eigencore import EigenPairs
from .engine import (
    BETA_MODES,
    BanditConfig,
    BetaSchedule,
    ConfigError,
    CovarianceState,
    EstimatorState,
    TrialRecord,
)
from .inference import (
    clt_statistic,
    confidence_set_ellipsoidal,
    confidence_set_spherical,
    contains,
    MIN_NORMALITY_SAMPLES,
    normality_test,
    residual_variance,
)
from .rng import draw_streams

CSV_COLUMNS = (
    "t", "lambda_min", "lambda_bar", "lambda_top", "c_t", "benchmark", "ratio_2d",
    "align_star", "align_hat", "weighted_err", "plain_err", "regret_so_far",
)
NORMALIZE_TOL = 1e-6
EXACT_TOL = 1e-12

CONFIG_KEYS = {
    "d", "horizon", "sigma", "theta_star", "beta", "ridge", "noise", "seed",
    "refactor_period", "theta_hat0", "trials", "workers", "stride", "delta",
}
BETA_KEYS = {"mode", "value", "delta", "L", "c"}


@dataclass(frozen=True)
class HarnessOptions:
    trials: int = 100
    workers: int = 1
    stride: float = GRID_RATIO
    delta: float = 0.1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not self.stride > 1.0:
            raise ConfigError("stride (grid ratio) must exceed 1")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")


# ---------------------------------------------------------------- config

def config_from_dict(doc: dict):
    """Validate a plain mapping into ``(BanditConfig, HarnessOptions)``."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        d = int(doc.get("d", 2))
        theta = doc.get("theta_star")
        if theta is None:
            theta = [1.0] + [0.0] * (d - 1)
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 1:
            raise ConfigError("theta_star must be a flat list")
        norm = float(np.linalg.norm(theta))
        if abs(norm - 1.0) > NORMALIZE_TOL:
            raise ConfigError(f"theta_star has norm {norm!r}; it must be a unit vector")
        if abs(norm - 1.0) > EXACT_TOL:
            warnings.warn(f"theta_star norm {norm!r} normalized to 1", stacklevel=2)
            theta = theta / norm
        beta = doc.get("beta", {})
        if isinstance(beta, (int, float)):
            beta = {"mode": "constant", "value": beta}
        if not isinstance(beta, dict) or set(beta) - BETA_KEYS:
            raise ConfigError(f"beta must be a number or a mapping with keys {sorted(BETA_KEYS)}")
        if beta.get("mode", "stability") not in BETA_MODES:
            raise ConfigError(f"beta mode must be one of {BETA_MODES}")
        schedule = BetaSchedule(**{k: (v if k == "mode" or v is None else float(v)) for k, v in beta.items()})
        h0 = doc.get("theta_hat0")
        config = BanditConfig(
            d=d,
            T=int(doc.get("horizon", 10_000)),
            sigma=float(doc.get("sigma", 0.25)),
            theta_star=theta,
            beta_schedule=schedule,
            ridge=float(doc.get("ridge", 1.0)),
            noise_kind=str(doc.get("noise", "gaussian")),
            base_seed=int(doc.get("seed", 0)),
            refactor_period=int(doc.get("refactor_period", 1000)),
            theta_hat0=None if h0 is None else np.asarray(h0, dtype=float),
        )
        options = HarnessOptions(
            trials=int(doc.get("trials", 100)),
            workers=int(doc.get("workers", 1)),
            stride=float(doc.get("stride", GRID_RATIO)),
            delta=float(doc.get("delta", 0.1)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    config.beta  # resolve once so bad schedules fail here
    return config, options


def parse_config(text: str):
    """Parse a YAML or JSON config document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return config_from_dict(doc if doc is not None else {})


def config_to_dict(config: BanditConfig, options: HarnessOptions | None = None) -> dict:
    sched = config.beta_schedule
    beta = {"mode": sched.mode, "delta": sched.delta, "L": sched.L, "c": sched.c}
    if sched.value is not None:
        beta["value"] = sched.value
    doc = {
        "d": config.d,
        "horizon": config.T,
        "sigma": config.sigma,
        "theta_star": config.theta_star.tolist(),
        "beta": beta,
        "ridge": config.ridge,
        "noise": config.noise_kind,
        "seed": config.base_seed,
        "refactor_period": config.refactor_period,
    }
    if config.theta_hat0 is not None:
        doc["theta_hat0"] = config.theta_hat0.tolist()
    if options is not None:
        doc.update(asdict(options))
    return doc


def serialize_config(config: BanditConfig, options: HarnessOptions | None = None) -> str:
    # JSON is a subset of YAML and repr-formatted floats round-trip exactly
    return json.dumps(config_to_dict(config, options), indent=2, sort_keys=True)


# ---------------------------------------------------------------- trials

def _simulate(config: BanditConfig, trial_index: int, grid):
    streams = draw_streams(config, trial_index)
    beta = config.beta
    out = backend.run_loop(
        config.d, config.T, beta, config.ridge,
        np.ascontiguousarray(config.theta_star), np.ascontiguousarray(streams.theta_hat0),
        streams.noise, np.ascontiguousarray(streams.fallback),
        config.refactor_period, np.ascontiguousarray(grid, dtype=np.int64),
    )
    return beta, streams, out


def default_grid(T, stride=GRID_RATIO):
    return snapshot_grid(T, stride, extra=(T // 10,))


def run_trial(config: BanditConfig, trial_index: int, stride: float = GRID_RATIO) -> TrialRecord:
    """One seeded LinUCB trial with diagnostics on the geometric grid."""
    grid = default_grid(config.T, stride)
    beta, streams, out = _simulate(config, trial_index, grid)
    cov = CovarianceState(config.T, out["lambda_matrix"], EigenPairs(out["values"], out["vectors"]),
                          int(out["updates_since_refactor"]))
    est = EstimatorState(out["b_vec"], out["theta_bar"], out["theta_hat"], out["eta"])
    snaps = [
        snapshot_from_arrays(int(t), out["snap_values"][k], out["snap_v1"][k], out["snap_theta_bar"][k],
                             out["snap_theta_hat"][k], config.theta_star, beta, out["snap_werr"][k],
                             out["snap_regret"][k], out["snap_werr_runmax"][k])
        for k, t in enumerate(grid)
    ]
    return TrialRecord(config, trial_index, beta, out["actions"], out["rewards"], streams.noise, cov, est,
                       snaps, out["snap_werr_runmax"], int(out["fallback_count"]))


@dataclass
class TrialResult:
    """Compact per-trial output used by the Monte Carlo fold."""
    index: int
    beta: float
    sigma2_hat: float
    theta_hat: np.ndarray
    clt: np.ndarray
    covered_spherical: bool
    covered_ellipsoidal: bool
    values: np.ndarray
    lambda_matrix: np.ndarray
    regret: float
    fallback_count: int
    grid: np.ndarray
    snap_values: np.ndarray
    snap_plain_err: np.ndarray
    snap_werr_runmax: np.ndarray
    seconds: float = 0.0


def trial_result(config: BanditConfig, trial_index: int, delta: float, stride: float = GRID_RATIO,
                 with_grid: bool = True) -> TrialResult:
    start = time.perf_counter()
    grid = default_grid(config.T, stride) if with_grid else np.array([config.T], dtype=np.int64)
    beta, _, out = _simulate(config, trial_index, grid)
    T, d = config.T, config.d
    theta_hat = out["theta_hat"]
    s2 = residual_variance(out["actions"], out["rewards"], theta_hat) if T > d else float("nan")
    sph = confidence_set_spherical(theta_hat, s2, beta, T, d, delta)
    ell = confidence_set_ellipsoidal(theta_hat, out["lambda_matrix"], s2, delta)
    plain = np.linalg.norm(out["snap_theta_bar"] - config.theta_star, axis=1)
    return TrialResult(
        index=trial_index,
        beta=beta,
        sigma2_hat=s2,
        theta_hat=theta_hat,
        clt=clt_statistic(theta_hat, config.theta_star, beta, T, d).statistic,
        covered_spherical=contains(sph, config.theta_star),
        covered_ellipsoidal=contains(ell, config.theta_star),
        values=out["values"],
        lambda_matrix=out["lambda_matrix"],
        regret=float(out["snap_regret"][-1]),
        fallback_count=int(out["fallback_count"]),
        grid=grid,
        snap_values=out["snap_values"],
        snap_plain_err=plain,
        snap_werr_runmax=out["snap_werr_runmax"],
        seconds=time.perf_counter() - start,
    )


def _run_chunk(args):
    config, indices, delta, stride, with_grid = args
    return [trial_result(config, i, delta, stride, with_grid) for i in indices]


def run_trials(config: BanditConfig, indices, delta=0.1, stride=GRID_RATIO, workers=1, with_grid=True):
    """Execute trials in the given order; results come back sorted by index."""
    indices = [int(i) for i in indices]
    if workers <= 1 or len(indices) <= 1:
        results = _run_chunk((config, indices, delta, stride, with_grid))
    else:
        chunks = [indices[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [(config, c, delta, stride, with_grid) for c in chunks if c])
            results = [r for part in parts for r in part]
    return sorted(results, key=lambda r: r.index)


# ---------------------------------------------------------------- summary

@dataclass
class McSummary:
    n_trials: int
    beta: float
    delta: float
    normality_stat: list
    normality_p: list
    coverage_spherical: float
    coverage_ellipsoidal: float
    ratio_median: float
    ratio_iqr: list
    error_slope: float | None
    error_intercept: float | None
    mean_regret: float
    wall_clock_per_trial: float = field(default=float("nan"), compare=False)
    trials: list = field(default_factory=list, repr=False, compare=False)

    def to_dict(self) -> dict:
        # wall clock is excluded so summaries of identical runs are byte-identical
        skip = {"wall_clock_per_trial", "trials"}
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in skip}


def _last_decade(grid, T):
    return grid >= max(1, T // 10)


def summarize(results, config: BanditConfig, delta: float) -> McSummary:
    """Deterministic fold over trial results sorted by trial index."""
    results = sorted(results, key=lambda r: r.index)
    if not results:
        raise ValueError("no trial results to summarize")
    idx = [r.index for r in results]
    if len(set(idx)) != len(idx):
        raise ValueError("duplicate trial indices")
    n = len(results)
    d, T = config.d, config.T
    beta = results[0].beta
    stats, ps = [], []
    if n >= MIN_NORMALITY_SAMPLES:
        z = np.array([r.clt / math.sqrt(r.sigma2_hat) if r.sigma2_hat > 0 else r.clt * np.nan
                      for r in results])
        for j in range(d - 1):
            col = z[:, j]
            if np.all(np.isfinite(col)):
                st, p = normality_test(col)
                stats.append(float(st))
                ps.append(float(p))
            else:
                stats.append(None)
                ps.append(None)
    bench = math.sqrt(2.0 * beta * beta * T / (d + 1)) if beta > 0 else float("nan")
    ratios = np.concatenate([r.values[1:] / bench for r in results])
    q1, med, q3 = (float(v) for v in np.percentile(ratios, [25, 50, 75]))
    slope = intercept = None
    grid = results[0].grid
    if grid.shape[0] > 1:
        keep = _last_decade(grid, T)
        err = np.median(np.array([r.snap_plain_err for r in results]), axis=0)
        pts = np.column_stack([grid[keep], err[keep]])
        pts = pts[pts[:, 1] > 0]
        if pts.shape[0] >= 2:
            slope, intercept = slope_fit(pts)
    return McSummary(
        n_trials=n,
        beta=float(beta),
        delta=float(delta),
        normality_stat=stats,
        normality_p=ps,
        coverage_spherical=sum(r.covered_spherical for r in results) / n,
        coverage_ellipsoidal=sum(r.covered_ellipsoidal for r in results) / n,
        ratio_median=med,
        ratio_iqr=[q1, q3],
        error_slope=slope,
        error_intercept=intercept,
        mean_regret=float(math.fsum(r.regret for r in results) / n),
        wall_clock_per_trial=float(sum(r.seconds for r in results) / n),
        trials=results,
    )


def run_montecarlo(config: BanditConfig, n_trials: int, options: HarnessOptions | None = None,
                   start: int = 0, order=None, with_grid: bool = True) -> McSummary:
    """Run trials ``start .. start + n_trials - 1`` and fold them.

    ``order`` optionally permutes execution; the summary does not depend on it.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    opts = options or HarnessOptions(trials=n_trials)
    indices = list(range(start, start + n_trials))
    if order is not None:
        indices = [indices[k] for k in order]
        if sorted(indices) != list(range(start, start + n_trials)):
            raise ValueError("order must be a permutation of range(n_trials)")
    results = run_trials(config, indices, opts.delta, opts.stride, opts.workers, with_grid)
    return summarize(results, config, opts.delta)


def merge_summaries(parts, config: BanditConfig) -> McSummary:
    parts = list(parts)
    results = [r for p in parts for r in p.trials]
    return summarize(results, config, parts[0].delta)


# ---------------------------------------------------------------- export

def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def summary_json(summary: McSummary) -> str:
    return json.dumps(_clean(summary.to_dict()), indent=2, sort_keys=True) + "\n"


def summary_from_json(text: str) -> McSummary:
    doc = json.loads(text)
    return McSummary(**doc)


def record_to_dict(record: TrialRecord) -> dict:
    snaps = record.snapshots
    return _clean({
        "config": config_to_dict(record.config),
        "trial_index": record.trial_index,
        "beta": record.beta,
        "regret": record.regret,
        "fallback_count": record.fallback_count,
        "theta_bar": record.est.theta_bar,
        "theta_hat": record.est.theta_hat,
        "eigenvalues": record.cov.pairs.values,
        "lambda_matrix": record.cov.lambda_matrix,
        "snapshots": {
            "t": [s.t for s in snaps],
            "eigenvalues": [s.eigenvalues for s in snaps],
            "align_star": [s.align_star for s in snaps],
            "align_hat": [s.align_hat for s in snaps],
            "weighted_err": [s.weighted_err for s in snaps],
            "plain_err": [s.plain_err for s in snaps],
            "regret_so_far": [s.regret_so_far for s in snaps],
            "werr_runmax": [s.werr_runmax for s in snaps],
        },
    })


def snapshots_from_record(doc: dict):
    """Rebuild the snapshot series stored by ``record_to_dict``."""
    config, _ = config_from_dict(doc["config"])
    beta = float(doc["beta"])
    s = doc["snapshots"]
    out = []
    for k, t in enumerate(s["t"]):
        values = np.asarray(s["eigenvalues"][k], dtype=float)
        bench = math.sqrt(2.0 * beta * beta * max(t, 1) / (config.d + 1))
        out.append(_snapshot_row(t, values, beta, bench, s, k))
    return config, beta, out


def _snapshot_row(t, values, beta, bench, s, k):
    lmin = float(values[-1])
    return PhaseSnapshot(
        t=int(t), lambda_min=lmin, lambda_bar=float(values[1:].mean()), lambda_top=float(values[0]),
        c_t=lmin / (beta * math.sqrt(max(t, 1))) if beta > 0 else float("inf"),
        benchmark=bench, delta_i=values[1:] / bench - 1.0,
        align_star=float(s["align_star"][k]), align_hat=float(s["align_hat"][k]),
        ratio_2d=float(values[1] / lmin), weighted_err=float(s["weighted_err"][k]),
        plain_err=float(s["plain_err"][k]), eigenvalues=values,
        regret_so_far=float(s["regret_so_far"][k]), werr_runmax=float(s["werr_runmax"][k]),
    )


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_series_csv(snapshots, path):
    """CSV time series; ``path`` may also be an open text stream."""
    if hasattr(path, "write"):
        _write_series(snapshots, path)
        return
    with open(path, "w", newline="") as fh:
        _write_series(snapshots, fh)


def _write_series(snapshots, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in snapshots:
        w.writerow([_fmt(getattr(s, c)) for c in CSV_COLUMNS])


def read_series_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return header, [[int(r[0])] + [float(v) for v in r[1:]] for r in body]


def write_clt_csv(summary: McSummary, path):
    """Per-trial CLT samples: index, sigma2_hat, then the d-1 coordinates."""
    trials = summary.trials
    k = trials[0].clt.shape[0] if trials else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "sigma2_hat"] + [f"z{j + 1}" for j in range(k)])
        for r in trials:
            w.writerow([r.index, _fmt(r.sigma2_hat)] + [_fmt(v) for v in r.clt])


def export(obj, fmt: str, path):
    """Write a TrialRecord or snapshot list (csv/json) or an McSummary (json)."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown export format {fmt!r}")
    if isinstance(obj, McSummary):
        if fmt != "json":
            raise ValueError("summaries export as json")
        with open(path, "w") as fh:
            fh.write(summary_json(obj))
        return path
    if isinstance(obj, TrialRecord):
        if fmt == "json":
            with open(path, "w") as fh:
                json.dump(record_to_dict(obj), fh, indent=1, sort_keys=True)
                fh.write("\n")
            return path
        obj = obj.snapshots
    if fmt != "csv":
        raise ValueError("snapshot series export as csv")
    write_series_csv(obj, path)
    return path
