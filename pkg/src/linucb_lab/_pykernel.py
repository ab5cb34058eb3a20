"""Reference trial loop built from the engine's per-round operations.

Same contract as the compiled ``_kernel.run_loop``; used when the extension is
not built or when ``LINUCB_LAB_BACKEND=python``.
"""
from __future__ import annotations

import math

import numpy as np

from .eigencore import DEGENERATE_NORM, EigenPairs, SecularError, eig_sym, rank_one_update
from .engine import CovarianceState, ridge_estimate, select_action


def run_loop(d, T, beta, ridge, theta_star, theta_hat0, noise, fallback_pool,
             refactor_period, snap_rounds):
    lam = ridge * np.eye(d)
    cov = CovarianceState(0, lam, EigenPairs(np.full(d, float(ridge)), np.eye(d)))
    theta_hat = np.array(theta_hat0, dtype=float)
    theta_bar = np.zeros(d)
    b_vec = np.zeros(d)
    eta = np.zeros(d)
    actions = np.empty((T, d))
    rewards = np.empty(T)
    n = len(snap_rounds)
    out = {
        "snap_values": np.empty((n, d)),
        "snap_v1": np.empty((n, d)),
        "snap_theta_bar": np.empty((n, d)),
        "snap_theta_hat": np.empty((n, d)),
        "snap_werr": np.empty(n),
        "snap_regret": np.empty(n),
        "snap_werr_runmax": np.empty(n),
    }
    fallbacks = 0
    pool_next = 0
    regret = 0.0
    runmax = 0.0
    k = 0
    for t in range(1, T + 1):
        dec = select_action(cov, theta_hat, beta)
        fallbacks += dec.fallback
        a = dec.action
        eps = noise[t - 1]
        r = float(a @ theta_star) + eps
        actions[t - 1] = a
        rewards[t - 1] = r
        regret += 1.0 - float(a @ theta_star)

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
        cov.t = t
        b_vec += r * a
        eta += eps * a
        theta_bar = ridge_estimate(cov, b_vec)
        norm = np.linalg.norm(theta_bar)
        if norm >= DEGENERATE_NORM:
            theta_hat = theta_bar / norm
        else:
            theta_hat = fallback_pool[pool_next % len(fallback_pool)].copy()
            pool_next += 1

        e = theta_bar - theta_star
        werr = math.sqrt(max(0.0, float(e @ cov.lambda_matrix @ e)))
        runmax = max(runmax, werr)
        while k < n and snap_rounds[k] == t:
            out["snap_values"][k] = cov.pairs.values
            out["snap_v1"][k] = cov.pairs.vectors[:, 0]
            out["snap_theta_bar"][k] = theta_bar
            out["snap_theta_hat"][k] = theta_hat
            out["snap_werr"][k] = werr
            out["snap_regret"][k] = regret
            out["snap_werr_runmax"][k] = runmax
            k += 1

    out.update(
        actions=actions,
        rewards=rewards,
        lambda_matrix=cov.lambda_matrix,
        values=cov.pairs.values,
        vectors=cov.pairs.vectors,
        updates_since_refactor=cov.updates_since_refactor,
        b_vec=b_vec,
        theta_bar=theta_bar,
        theta_hat=theta_hat,
        eta=eta,
        fallback_count=int(fallbacks),
    )
    return out
