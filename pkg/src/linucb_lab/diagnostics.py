"""Observable spectral and error diagnostics for LinUCB runs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import stability_scale

GRID_RATIO = 1.1
MAB_RTOL = 1e-9
MAB_SUM_TOL = 1e-6
MAB_MAXITER = 400


@dataclass(frozen=True)
class PhaseSnapshot:
    t: int
    lambda_min: float
    lambda_bar: float
    lambda_top: float
    c_t: float
    benchmark: float
    delta_i: np.ndarray
    align_star: float
    align_hat: float
    ratio_2d: float
    weighted_err: float
    plain_err: float
    eigenvalues: np.ndarray = field(repr=False, default=None)
    regret_so_far: float = float("nan")
    werr_runmax: float = float("nan")


@dataclass(frozen=True)
class PhaseReport:
    t1: int | None
    t2: int | None
    t3: int | None
    stability_ratio: float
    stable: bool


def eigen_benchmark(beta, t, d):
    """lambda*_t = n_eff = sqrt(2 beta^2 t / (d + 1))."""
    if d < 2:
        raise ValueError("d must be at least 2")
    if not (beta > 0 and t > 0):
        raise ValueError("beta and t must be positive")
    v = math.sqrt(2.0 * beta * beta * t / (d + 1))
    return v, v


def snapshot_from_arrays(t, values, v1, theta_bar, theta_hat, theta_star, beta, werr,
                         regret_so_far=float("nan"), werr_runmax=float("nan")) -> PhaseSnapshot:
    values = np.asarray(values, dtype=float)
    d = values.shape[0]
    tt = max(int(t), 1)
    bench = math.sqrt(2.0 * beta * beta * tt / (d + 1)) if beta > 0 else float("nan")
    lmin = float(values[-1])
    ts = np.asarray(theta_star, dtype=float)
    # v_{t,1} is defined up to sign; compare with the orientation closest to theta*
    v1 = np.asarray(v1, dtype=float)
    if v1 @ ts < 0:
        v1 = -v1
    return PhaseSnapshot(
        t=int(t),
        lambda_min=lmin,
        lambda_bar=float(values[1:].mean()),
        lambda_top=float(values[0]),
        c_t=lmin / (beta * math.sqrt(tt)) if beta > 0 else float("inf"),
        benchmark=bench,
        delta_i=values[1:] / bench - 1.0,
        align_star=float(np.linalg.norm(v1 - ts)),
        align_hat=float(np.linalg.norm(v1 - np.asarray(theta_hat))),
        ratio_2d=float(values[1] / lmin),
        weighted_err=float(werr),
        plain_err=float(np.linalg.norm(np.asarray(theta_bar) - ts)),
        eigenvalues=values.copy(),
        regret_so_far=float(regret_so_far),
        werr_runmax=float(werr_runmax),
    )


def phase_snapshot(cov, est, theta_star, beta) -> PhaseSnapshot:
    e = est.theta_bar - theta_star
    werr = math.sqrt(max(0.0, float(e @ cov.lambda_matrix @ e)))
    return snapshot_from_arrays(cov.t, cov.pairs.values, cov.pairs.vectors[:, 0], est.theta_bar,
                                est.theta_hat, theta_star, beta, werr)


def weighted_error_max(series) -> float:
    series = list(series)
    if not series:
        raise ValueError("empty snapshot series")
    return max(s.weighted_err for s in series)


def slope_fit(points):
    """Least-squares line through (log t, log value); returns (slope, intercept)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValueError("need at least two (t, value) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("slope_fit needs positive finite coordinates")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise ValueError("slope_fit needs at least two distinct t values")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    return slope, float(ym - slope * xm)


def _mab_counts(mu, beta, level):
    return (beta / (level - mu)) ** 2


def mab_balance(mu, beta, T) -> np.ndarray:
    """Counts n_a with mu_a + beta/sqrt(n_a) equal across arms and sum T.

    The total count is decreasing in the common level L, so L is found by
    bisection on (max mu, max mu + beta sqrt(K/T) + beta].
    """
    mu = np.asarray(mu, dtype=float)
    K = mu.shape[0]
    if K < 2:
        raise ValueError("need at least two arms")
    if not beta > 0:
        raise ValueError("beta must be positive")
    if T < K:
        raise ValueError("need T >= K")
    top = float(mu.max())
    if np.all(mu == top):
        return np.full(K, T / K)
    lo = top
    hi = top + beta * math.sqrt(K / T) + beta
    total = lambda L: float(np.sum(_mab_counts(mu, beta, L)))
    if total(hi) > T:
        raise ArithmeticError("balancing level not bracketed")
    for _ in range(MAB_MAXITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if total(mid) > T:
            lo = mid
        else:
            hi = mid
    level = 0.5 * (lo + hi)
    n = _mab_counts(mu, beta, level)
    # the best arm absorbs the bisection slack; its level moves by O(slack/n^1.5)
    best = int(np.argmax(mu))
    n[best] += T - n.sum()
    if abs(n.sum() - T) > MAB_SUM_TOL:
        raise ArithmeticError("balancing bisection did not converge")
    lv = mu + beta / np.sqrt(n)
    if np.max(np.abs(lv - level)) > MAB_RTOL * abs(level):
        raise ArithmeticError("balancing bisection did not converge")
    return n


def stability_check(beta, sigma, d, T):
    """Ratio of beta to d^2 (sigma sqrt(d + log log T) + 1) and whether it exceeds 1."""
    ratio = beta / stability_scale(sigma, d, T)
    return {"ratio": ratio, "stable": bool(ratio > 1.0)}


def snapshot_grid(T, ratio=GRID_RATIO, extra=()):
    """Rounds ceil(ratio^k) from 1 up to T, deduplicated, plus T and ``extra``."""
    if ratio <= 1.0:
        raise ValueError("grid ratio must exceed 1")
    pts = set()
    k = 0
    while True:
        t = math.ceil(ratio ** k)
        if t > T:
            break
        pts.add(t)
        k += 1
    pts.add(int(T))
    pts.update(int(e) for e in extra if 1 <= e <= T)
    return np.array(sorted(pts), dtype=np.int64)


def _first_holding(ts, ok):
    """First t from which ``ok`` holds through the end of the series."""
    ok = np.asarray(ok, dtype=bool)
    if ok.size == 0 or not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    return int(ts[0] if bad.size == 0 else ts[bad[-1] + 1])


def phase_report(series, beta, sigma, d, T, align_const=10.0, delta_band=0.25) -> PhaseReport:
    """Phase boundaries read off a snapshot series.

    t1 is the first t with beta/sqrt(lambda_{t,d}) <= 1.  t2 is the first
    t >= t1 from which ||v_{t,1} - theta*|| <= align_const (sigma sqrt(d + log log T)
    + 1) / sqrt(lambda_{t,d}) keeps holding; t3 likewise for
    max_i |Delta_{t,i}| <= delta_band.
    """
    series = list(series)
    ts = np.array([s.t for s in series])
    lmin = np.array([s.lambda_min for s in series])
    width = beta / np.sqrt(lmin)
    hit = np.flatnonzero(width <= 1.0)
    t1 = int(ts[hit[0]]) if hit.size else None
    scale = sigma * math.sqrt(d + math.log(math.log(max(T, 3)))) + 1.0
    align_ok = [s.align_star <= align_const * scale / math.sqrt(s.lambda_min) for s in series]
    delta_ok = [float(np.max(np.abs(s.delta_i))) <= delta_band for s in series]
    chk = stability_check(beta, sigma, d, max(T, 3))
    if t1 is None:
        return PhaseReport(None, None, None, chk["ratio"], chk["stable"])
    # the later phases are only searched for after the exploration phase ends
    after = ts >= t1
    t2 = _first_holding(ts[after], np.asarray(align_ok)[after])
    t3 = _first_holding(ts[after], np.asarray(delta_ok)[after])
    return PhaseReport(t1, t2, t3, chk["ratio"], chk["stable"])
