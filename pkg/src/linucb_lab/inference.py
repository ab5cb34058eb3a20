"""Post-run inference: noise variance, chi-square quantiles, confidence sets,
the scaled CLT statistic, a normality test and coverage counting."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .eigencore import orthonormal_complement

UNIT_TOL = 1e-8
CENTER_TOL = 1e-10
MIN_NORMALITY_SAMPLES = 20
NULL_REPS = 2000
NULL_SEED = 20240611


@dataclass(frozen=True)
class ConfidenceSet:
    kind: str
    center: np.ndarray
    sigma2_hat: float
    quantile: float
    delta: float
    radius2: float | None = None
    metric: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("spherical", "ellipsoidal"):
            raise ValueError(f"unknown confidence set kind {self.kind!r}")
        if abs(np.linalg.norm(self.center) - 1.0) > CENTER_TOL:
            raise ValueError("confidence set center must be a unit vector")
        if self.quantile < 0 or (self.radius2 is not None and self.radius2 < 0):
            raise ValueError("quantile and radius must be non-negative")


@dataclass(frozen=True)
class CltSample:
    statistic: np.ndarray
    basis_tag: str


def residual_variance(actions, rewards, theta_hat) -> float:
    actions = np.asarray(actions, dtype=float)
    T, d = actions.shape
    if T <= d:
        raise ValueError(f"need T > d to estimate the noise variance (T={T}, d={d})")
    resid = np.asarray(rewards, dtype=float) - actions @ np.asarray(theta_hat, dtype=float)
    return float(np.sum(resid * resid) / (T - d))


def estimate_noise_variance(trial) -> float:
    """Residual mean square against the final projected estimate, over T - d."""
    return residual_variance(trial.actions, trial.rewards, trial.est.theta_hat)


def chi2_quantile(k: int, p: float) -> float:
    """q with P(k/2, q/2) = p, P the regularized lower incomplete gamma."""
    if k < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    a = 0.5 * k
    x = float(special.gammaincinv(a, p))
    # one Newton polish on the cdf; the density is x^(a-1) e^-x / Gamma(a)
    logpdf = (a - 1.0) * math.log(x) - x - math.lgamma(a) if x > 0 else -math.inf
    if logpdf > -700:
        x -= (float(special.gammainc(a, x)) - p) / math.exp(logpdf)
    return 2.0 * x


def confidence_set_spherical(theta_hat_T, sigma2_hat, beta, T, d, delta) -> ConfidenceSet:
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    q = chi2_quantile(d - 1, 1.0 - delta)
    radius2 = sigma2_hat * math.sqrt((d + 1) / (2.0 * beta * beta * T)) * q
    return ConfidenceSet("spherical", np.asarray(theta_hat_T, dtype=float), float(sigma2_hat), q, delta,
                         radius2=radius2)


def confidence_set_ellipsoidal(theta_hat_T, lambda_T, sigma2_hat, delta) -> ConfidenceSet:
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    center = np.asarray(theta_hat_T, dtype=float)
    q = chi2_quantile(center.shape[0] - 1, 1.0 - delta)
    return ConfidenceSet("ellipsoidal", center, float(sigma2_hat), q, delta,
                         metric=np.array(lambda_T, dtype=float))


def contains(cset: ConfidenceSet, theta) -> bool:
    theta = np.asarray(theta, dtype=float)
    if abs(np.linalg.norm(theta) - 1.0) > UNIT_TOL:
        raise ValueError("query must be a unit vector")
    e = cset.center - theta
    if cset.kind == "spherical":
        return bool(e @ e <= cset.radius2)
    return bool(e @ cset.metric @ e <= cset.sigma2_hat * cset.quantile)


def clt_prefactor(beta, T, d) -> float:
    return (2.0 * beta * beta * T / (d + 1)) ** 0.25


def clt_statistic(theta_hat_T, theta_star, beta, T, d, basis=None) -> CltSample:
    """(2 beta^2 T / (d+1))^(1/4) U^T (theta_hat_T - theta_star).

    ``basis`` defaults to ``orthonormal_complement(theta_star)``; any other
    orthonormal complement gives a rotated statistic with the same norm.
    """
    u = orthonormal_complement(theta_star) if basis is None else np.asarray(basis, dtype=float)
    diff = np.asarray(theta_hat_T, dtype=float) - np.asarray(theta_star, dtype=float)
    stat = clt_prefactor(beta, T, d) * (u.T @ diff)
    tag = hashlib.sha256(np.ascontiguousarray(u).tobytes()).hexdigest()[:16]
    return CltSample(stat, tag)


def normal_cdf(x: float) -> float:
    # erfc keeps full relative accuracy in the lower tail
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _ks_fitted(x: np.ndarray) -> float:
    """KS distance between the sample and N(mean, var) fitted from it."""
    n = x.shape[0]
    z = np.sort((x - x.mean()) / x.std(ddof=1))
    cdf = 0.5 * special.erfc(-z / math.sqrt(2.0))
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


@lru_cache(maxsize=32)
def _lilliefors_null(n: int, reps: int) -> np.ndarray:
    rng = np.random.default_rng([NULL_SEED, n])
    stats = np.empty(reps)
    for r in range(reps):
        stats[r] = _ks_fitted(rng.standard_normal(n))
    stats.sort()
    return stats


def kolmogorov_sf(x: float) -> float:
    """Survival function of the limiting Kolmogorov distribution."""
    if x <= 0:
        return 1.0
    return float(min(1.0, max(0.0, special.kolmogorov(x))))


def normality_test(samples, method: str = "lilliefors", reps: int = NULL_REPS):
    """KS test against a normal with mean and variance fitted from the data.

    The default p-value comes from a seeded simulation of the statistic's null
    law with fitted parameters, ``(1 + #null >= D) / (reps + 1)``.
    ``method="kolmogorov"`` uses the asymptotic Kolmogorov law instead, which
    ignores the fitting and is very conservative.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.shape[0]
    if n < MIN_NORMALITY_SAMPLES:
        raise ValueError(f"normality test needs at least {MIN_NORMALITY_SAMPLES} samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if x.std() == 0.0:
        return 1.0, 0.0
    stat = _ks_fitted(x)
    if method == "kolmogorov":
        return stat, kolmogorov_sf(math.sqrt(n) * stat)
    if method != "lilliefors":
        raise ValueError(f"unknown method {method!r}")
    null = _lilliefors_null(n, reps)
    exceed = reps - int(np.searchsorted(null, stat, side="left"))
    return stat, (1.0 + exceed) / (reps + 1.0)


def coverage_rate(sets, theta_star) -> float:
    sets = list(sets)
    if not sets:
        raise ValueError("coverage_rate needs at least one set")
    return sum(contains(s, theta_star) for s in sets) / len(sets)
