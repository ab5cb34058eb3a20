"""LinUCB on the unit-ball action set.

The learner keeps ``Lambda_t = ridge * I + sum a_s a_s^T`` together with an
incrementally maintained eigendecomposition, and picks each action by solving
the sphere-constrained inner maximisation in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .eigencore import (
    DEFLATE_GAP,
    EigenPairs,
    SecularError,
    eig_sym,
    project_sphere,
    random_unit,
    rank_one_update,
)

NOISE_KINDS = ("gaussian", "rademacher", "uniform")
BETA_MODES = ("constant", "theory", "stability")
KKT_RTOL = 1e-13
ROUNDOFF = 4 * 2.220446049250313e-16
KKT_MAXITER = 200
HARD_CASE_B = 1e-12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BetaSchedule:
    mode: str = "stability"
    value: float | None = None
    delta: float = 0.01
    L: float = 1.0
    c: float = 1.0

    def resolve(self, sigma: float, d: int, T: int) -> float:
        if self.mode == "constant":
            if self.value is None or self.value < 0:
                raise ConfigError("constant beta needs a non-negative value")
            return float(self.value)
        if self.mode == "theory":
            return beta_theoretical(sigma, d, T, self.L, self.delta)
        if self.mode == "stability":
            return beta_stability(sigma, d, max(T, 3), self.c)
        raise ConfigError(f"unknown beta mode {self.mode!r}")


@dataclass(frozen=True)
class BanditConfig:
    d: int
    T: int
    sigma: float
    theta_star: np.ndarray
    beta_schedule: BetaSchedule = field(default_factory=BetaSchedule)
    ridge: float = 1.0
    noise_kind: str = "gaussian"
    base_seed: int = 0
    refactor_period: int = 1000
    theta_hat0: np.ndarray | None = None

    def __post_init__(self):
        ts = np.asarray(self.theta_star, dtype=float)
        object.__setattr__(self, "theta_star", ts)
        if self.d < 2:
            raise ConfigError("d must be at least 2")
        if ts.shape != (self.d,):
            raise ConfigError(f"theta_star must have length {self.d}")
        if abs(np.linalg.norm(ts) - 1.0) > 1e-10:
            raise ConfigError("theta_star must be a unit vector")
        if self.T < 1:
            raise ConfigError("horizon must be at least 1")
        if not self.sigma >= 0:
            raise ConfigError("sigma must be non-negative")
        if not self.ridge > 0:
            raise ConfigError("ridge must be positive")
        if self.noise_kind not in NOISE_KINDS:
            raise ConfigError(f"noise must be one of {NOISE_KINDS}")
        if self.refactor_period < 0:
            raise ConfigError("refactor_period must be >= 0 (0 disables)")
        if self.theta_hat0 is not None:
            h0 = np.asarray(self.theta_hat0, dtype=float)
            if h0.shape != (self.d,) or abs(np.linalg.norm(h0) - 1.0) > 1e-10:
                raise ConfigError("theta_hat0 must be a unit vector of length d")
            object.__setattr__(self, "theta_hat0", h0)

    @property
    def beta(self) -> float:
        return self.beta_schedule.resolve(self.sigma, self.d, self.T)


@dataclass
class CovarianceState:
    t: int
    lambda_matrix: np.ndarray
    pairs: EigenPairs
    updates_since_refactor: int = 0


@dataclass
class EstimatorState:
    b_vec: np.ndarray
    theta_bar: np.ndarray
    theta_hat: np.ndarray
    eta_oracle: np.ndarray


@dataclass(frozen=True)
class ActionDecomposition:
    action: np.ndarray
    w_opt: np.ndarray
    kappa: np.ndarray
    nu: np.ndarray
    alpha: float
    xi_norm: float
    ucb_value: float
    fallback: bool = False


@dataclass
class TrialRecord:
    config: BanditConfig
    trial_index: int
    beta: float
    actions: np.ndarray
    rewards: np.ndarray
    noise: np.ndarray
    cov: CovarianceState
    est: EstimatorState
    snapshots: list = field(default_factory=list)
    weighted_err_runmax: np.ndarray | None = None
    fallback_count: int = 0

    @property
    def regret(self) -> float:
        return regret(self)


def beta_theoretical(sigma, d, T, L, delta) -> float:
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    return sigma * math.sqrt(d * math.log(1 + T * L * L / d) + 2 * math.log(1 / delta)) + 1.0


def stability_scale(sigma, d, T) -> float:
    """d^2 (sigma sqrt(d + log log T) + 1), the threshold beta must dominate."""
    if T < 3:
        raise ConfigError("stability schedule needs T >= 3")
    return d * d * (sigma * math.sqrt(d + math.log(math.log(T))) + 1.0)


def beta_stability(sigma, d, T, c) -> float:
    if not c > 0:
        raise ConfigError("stability constant c must be positive")
    return c * stability_scale(sigma, d, T)


def init_state(config: BanditConfig, rng: np.random.Generator | None = None):
    d = config.d
    lam = config.ridge * np.eye(d)
    # canonical basis for the isotropic start; the trial loops use the same one
    cov = CovarianceState(0, lam, EigenPairs(np.full(d, float(config.ridge)), np.eye(d)))
    if config.theta_hat0 is not None:
        theta_hat = config.theta_hat0.copy()
    else:
        if rng is None:
            raise ValueError("init_state needs the trial generator for theta_hat_0")
        theta_hat = random_unit(rng, d)
    zero = np.zeros(d)
    return cov, EstimatorState(zero.copy(), zero.copy(), theta_hat, zero.copy())


def ridge_estimate(cov: CovarianceState, b_vec) -> np.ndarray:
    v = cov.pairs.vectors
    return v @ ((v.T @ b_vec) / cov.pairs.values)


def ucb_score(cov: CovarianceState, theta_hat, beta, a) -> float:
    v = cov.pairs.vectors
    coords = v.T @ a
    bonus = math.sqrt(float(np.sum(coords * coords / cov.pairs.values)))
    return float(a @ theta_hat) + beta * bonus


def _psi(s, b2, gaps):
    # 1/sqrt(phi) - 1 with phi(s) = sum b^2/(s+g)^2; increasing in s
    den = s + gaps
    terms = b2 / (den * den)
    phi = terms.sum()
    dphi = -2.0 * (terms / den).sum()
    root = math.sqrt(phi)
    return 1.0 / root - 1.0, -0.5 * dphi / (phi * root)


def solve_inner(values, nu, beta):
    """Maximise sum_i (nu_i + beta w_i / sqrt(values_i))^2 over unit ``w``.

    ``values`` is non-increasing.  Returns ``(w, hard_case)``.
    """
    d = values.shape[0]
    lmin = values[d - 1]
    group = (values - lmin) <= DEFLATE_GAP * values[0]
    if beta == 0.0:
        w = np.zeros(d)
        w[int(np.flatnonzero(group)[0])] = 1.0
        return w, True
    alpha = beta / np.sqrt(values)
    b = alpha * nu
    # alpha_max^2 - alpha_i^2 without cancellation
    gaps = beta * beta * (values - lmin) / (values * lmin)
    gaps[group] = 0.0
    bg = math.sqrt(float(np.sum(b[group] ** 2)))
    b2 = b * b
    others = ~group
    if bg < HARD_CASE_B:
        phi0 = float(np.sum(b2[others] / gaps[others] ** 2)) if others.any() else 0.0
        if phi0 <= 1.0:
            w = np.zeros(d)
            w[others] = b[others] / gaps[others]
            first = int(np.flatnonzero(group)[0])
            w[first] = math.sqrt(max(0.0, 1.0 - phi0))
            return w, True
    # 1/|w(s)| - 1 is concave and increasing: Newton iterates from the left of
    # the root climb monotonically, so an overshoot is clamped to the bracket
    lo, hi = bg, math.sqrt(float(b2.sum()))
    s = hi
    for _ in range(KKT_MAXITER):
        f, fp = _psi(s, b2, gaps)
        if abs(f) <= ROUNDOFF:
            break
        if f > 0.0:
            hi = s
        else:
            lo = s
        nxt = s - f / fp if fp > 0 else 0.5 * (lo + hi)
        if nxt <= lo:
            nxt = lo if f > 0.0 and lo > 0.0 else 0.5 * (lo + hi)
        elif nxt >= hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - s) <= KKT_RTOL * s or hi - lo <= KKT_RTOL * hi:
            s = nxt
            break
        s = nxt
    else:
        raise SecularError("KKT root did not converge")
    if not s > 0:
        raise SecularError("KKT root collapsed to zero")
    w = b / (s + gaps)
    return w / np.linalg.norm(w), False


def _sphere_ascent(values, nu, beta, seed=0, starts=8, iters=2000):
    """Projected gradient ascent fallback for the inner maximisation."""
    rng = np.random.default_rng(seed)
    alpha = beta / np.sqrt(values)
    best, best_w = -np.inf, None
    for k in range(starts):
        w = nu.copy() if k == 0 else random_unit(rng, values.shape[0])
        for _ in range(iters):
            grad = 2.0 * alpha * (nu + alpha * w)
            nxt = project_sphere(w + grad / (np.max(alpha) ** 2 + 1.0), rng)
            if np.linalg.norm(nxt - w) < 1e-15:
                break
            w = nxt
        g = float(np.sum((nu + alpha * w) ** 2))
        if g > best:
            best, best_w = g, w
    return best_w


def decompose_action(values, vectors, theta_hat, beta, w, fallback=False):
    nu = vectors.T @ theta_hat
    y = nu + beta * w / np.sqrt(values)
    norm = float(np.linalg.norm(y))
    kappa = y / norm
    action = vectors @ kappa
    alpha = float(action @ theta_hat)
    xi = action - alpha * theta_hat
    return ActionDecomposition(
        action=action,
        w_opt=vectors @ w,
        kappa=kappa,
        nu=nu,
        alpha=alpha,
        xi_norm=float(np.linalg.norm(xi)),
        ucb_value=norm,
        fallback=fallback,
    )


def select_action(cov: CovarianceState, theta_hat, beta) -> ActionDecomposition:
    """LinUCB action: the radial projection of theta_hat + beta Lambda^{-1/2} w."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    values, vectors = cov.pairs.values, cov.pairs.vectors
    nu = vectors.T @ theta_hat
    try:
        w, _ = solve_inner(values, nu, beta)
        fallback = False
    except SecularError:
        w = _sphere_ascent(values, nu, beta)
        fallback = True
    return decompose_action(values, vectors, theta_hat, beta, w, fallback)


def draw_noise(kind: str, sigma: float, rng: np.random.Generator, size=None):
    if kind == "gaussian":
        return sigma * rng.standard_normal(size)
    if kind == "rademacher":
        return sigma * (2.0 * rng.integers(0, 2, size=size) - 1.0)
    if kind == "uniform":
        h = sigma * math.sqrt(3.0)
        return rng.uniform(-h, h, size)
    raise ValueError(f"unknown noise kind {kind!r}")


def sample_reward(a, theta_star, sigma, noise_kind, rng):
    eps = float(draw_noise(noise_kind, sigma, rng))
    return float(a @ theta_star) + eps, eps


def advance(cov: CovarianceState, est: EstimatorState, a, r, eps, refactor_period, fallback_rng=None):
    """Fold one observed (action, reward) pair into the states in place."""
    cov.lambda_matrix += np.outer(a, a)
    cov.updates_since_refactor += 1
    if refactor_period and cov.updates_since_refactor >= refactor_period:
        cov.pairs = eig_sym(cov.lambda_matrix)
        cov.updates_since_refactor = 0
    else:
        try:
            cov.pairs = rank_one_update(cov.pairs, a)
        except SecularError:
            cov.pairs = eig_sym(cov.lambda_matrix)
            cov.updates_since_refactor = 0
    cov.t += 1
    est.b_vec += r * a
    est.eta_oracle += eps * a
    est.theta_bar = ridge_estimate(cov, est.b_vec)
    est.theta_hat = project_sphere(est.theta_bar, fallback_rng)


def step(cov, est, config: BanditConfig, beta, rng, eps=None):
    """One LinUCB round.  ``eps`` overrides the noise draw when given."""
    if cov.t >= config.T:
        raise ValueError("horizon exhausted")
    dec = select_action(cov, est.theta_hat, beta)
    a = dec.action
    if eps is None:
        r, eps = sample_reward(a, config.theta_star, config.sigma, config.noise_kind, rng)
    else:
        r = float(a @ config.theta_star) + eps
    advance(cov, est, a, r, eps, config.refactor_period, rng)
    return cov, est, (a, r, eps, dec)


def regret(trial: TrialRecord) -> float:
    return float(np.sum(1.0 - trial.actions @ trial.config.theta_star))


def with_overrides(config: BanditConfig, **kw) -> BanditConfig:
    return replace(config, **kw)
