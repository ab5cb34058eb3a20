import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linucb_lab.eigencore import EigenPairs, eig_sym
from linucb_lab.engine import BanditConfig, CovarianceState, EstimatorState, beta_stability
from linucb_lab.diagnostics import (
    eigen_benchmark,
    mab_balance,
    phase_report,
    phase_snapshot,
    slope_fit,
    snapshot_grid,
    stability_check,
    weighted_error_max,
)
from linucb_lab.harness import run_trial


def test_eigen_benchmark():
    lam, n = eigen_benchmark(5.0, 1e4, 3)
    assert lam == n == pytest.approx(math.sqrt(125000), rel=1e-14)
    assert lam == pytest.approx(353.553, abs=1e-3)
    assert eigen_benchmark(5.0, 4e4, 3)[0] == pytest.approx(2 * lam, rel=1e-14)
    with pytest.raises(ValueError):
        eigen_benchmark(5.0, 100, 1)


def test_snapshot_at_start():
    cov = CovarianceState(0, np.eye(2), EigenPairs(np.ones(2), np.eye(2)))
    est = EstimatorState(np.zeros(2), np.zeros(2), np.array([0.0, 1.0]), np.zeros(2))
    s = phase_snapshot(cov, est, np.array([1.0, 0.0]), 2.0)
    assert s.lambda_min == s.lambda_bar == s.lambda_top == 1.0
    assert s.ratio_2d == 1.0


def test_snapshot_fixed_matrix():
    lam = np.diag([9.0, 4.0, 1.0])
    cov = CovarianceState(11, lam, eig_sym(lam))
    th = np.array([1.0, 0.0, 0.0])
    bar = np.array([0.9, 0.1, -0.2])
    est = EstimatorState(lam @ bar, bar, bar / np.linalg.norm(bar), np.zeros(3))
    s = phase_snapshot(cov, est, th, 3.0)
    assert s.lambda_bar == pytest.approx(2.5)
    assert s.ratio_2d == pytest.approx(4.0)
    assert s.align_star == pytest.approx(0.0, abs=1e-15)
    e = bar - th
    assert s.weighted_err == pytest.approx(math.sqrt(e @ lam @ e), rel=1e-14)
    assert s.plain_err == pytest.approx(np.linalg.norm(e), rel=1e-14)
    assert s.c_t == pytest.approx(1.0 / (3.0 * math.sqrt(11)))
    # Delta reproduces the non-leading eigenvalues
    assert s.benchmark * (1 + s.delta_i) == pytest.approx([4.0, 1.0], rel=1e-9)


@pytest.fixture(scope="module")
def record():
    th = np.array([0.6, 0.0, 0.8])
    return run_trial(BanditConfig(d=3, T=4000, sigma=0.3, theta_star=th), 1)


def test_snapshot_series_invariants(record):
    d = record.config.d
    for s in record.snapshots:
        assert s.lambda_min <= s.lambda_bar <= s.lambda_top
        assert s.ratio_2d >= 1 and s.benchmark > 0
        assert np.sum(s.eigenvalues) == pytest.approx(d * record.config.ridge + s.t, abs=1e-6)
        assert s.benchmark * (1 + s.delta_i) == pytest.approx(s.eigenvalues[1:], rel=1e-9)


def test_weighted_error_max(record):
    snaps = record.snapshots
    assert weighted_error_max(snaps[:1]) == snaps[0].weighted_err
    running = [weighted_error_max(snaps[: k + 1]) for k in range(len(snaps))]
    assert np.all(np.diff(running) >= 0)
    # recompute the final value from the stored state
    e = record.est.theta_bar - record.config.theta_star
    assert snaps[-1].weighted_err == pytest.approx(math.sqrt(e @ record.cov.lambda_matrix @ e), rel=1e-10)
    # the kernel's every-round running max dominates the grid max
    assert snaps[-1].werr_runmax >= weighted_error_max(snaps) - 1e-12
    with pytest.raises(ValueError):
        weighted_error_max([])


def test_slope_fit_planted_laws():
    t = np.geomspace(10, 1e5, 30)
    slope, _ = slope_fit(np.column_stack([t, t ** -0.25]))
    assert slope == pytest.approx(-0.25, abs=1e-12)
    slope, icpt = slope_fit(np.column_stack([t, 3 * np.sqrt(t)]))
    assert slope == pytest.approx(0.5, abs=1e-12) and icpt == pytest.approx(math.log(3), abs=1e-12)
    slope, _ = slope_fit([(2.0, 5.0), (8.0, 20.0)])
    assert slope == pytest.approx(1.0, abs=1e-14)


def test_slope_fit_errors():
    with pytest.raises(ValueError):
        slope_fit([(1.0, 2.0)])
    with pytest.raises(ValueError):
        slope_fit([(1.0, 2.0), (2.0, -1.0)])


def test_mab_symmetric():
    n = mab_balance([0.3, 0.3, 0.3], 1.0, 99)
    assert np.array_equal(n, [33.0, 33.0, 33.0])


def test_mab_two_arm_example():
    n = mab_balance([1.0, 0.5], 2.0, 1000)
    # independent scalar bisection on n1
    f = lambda n1: 1 + 2 / math.sqrt(n1) - 0.5 - 2 / math.sqrt(1000 - n1)
    lo, hi = 1e-9, 1000 - 1e-9
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) > 0 else (lo, mid)
    assert n[0] == pytest.approx(lo, rel=1e-8)
    l1, l2 = 1 + 2 / math.sqrt(n[0]), 0.5 + 2 / math.sqrt(n[1])
    assert abs(l1 - l2) <= 1e-9 * abs(l1)


def test_mab_small_beta_sends_mass_to_best():
    n = mab_balance([1.0, 0.2, 0.1], 1e-4, 1000)
    assert n[0] > 1000 - 1e-6
    assert n[1] < 1e-6 and n[2] < 1e-6


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(2, 6), beta=st.floats(0.01, 20), T=st.integers(6, 10**6))
def test_mab_random_instances(seed, K, beta, T):
    mu = np.random.default_rng(seed).uniform(-1, 1, K)
    n = mab_balance(mu, beta, T)
    lv = mu + beta / np.sqrt(n)
    assert np.max(np.abs(lv - lv.mean())) <= 1e-9 * abs(lv.mean()) + 1e-15
    assert abs(n.sum() - T) <= 1e-6


def test_mab_errors():
    with pytest.raises(ValueError):
        mab_balance([1.0], 1.0, 10)
    with pytest.raises(ValueError):
        mab_balance([1.0, 0.0], 0.0, 10)
    with pytest.raises(ValueError):
        mab_balance([1.0, 0.0, 0.5], 1.0, 2)


def test_stability_check():
    thr = beta_stability(0.5, 3, 1e4, 1.0)
    assert stability_check(thr, 0.5, 3, 1e4)["ratio"] == pytest.approx(1.0)
    assert stability_check(2 * thr, 0.5, 3, 1e4)["ratio"] == pytest.approx(2.0)
    # threshold at T = e^e is 4 (sqrt(3) + 1) = 10.928, so 43.712 is four times it
    rep = stability_check(43.712, 1.0, 2, math.e ** math.e)
    assert rep["ratio"] == pytest.approx(4.0, abs=1e-4) and rep["stable"]
    assert stability_check(21.856, 1.0, 2, math.e ** math.e)["ratio"] == pytest.approx(2.0, abs=1e-4)


def test_snapshot_grid():
    g = snapshot_grid(1000, 1.1, extra=(100,))
    assert g[0] == 1 and g[-1] == 1000 and 100 in g
    assert np.all(np.diff(g) > 0)
    ratios = g[1:] / g[:-1]
    assert np.all(ratios[g[1:] > 50] < 1.2)
    with pytest.raises(ValueError):
        snapshot_grid(10, 1.0)


def test_phase_report(record):
    cfg = record.config
    rep = phase_report(record.snapshots, record.beta, cfg.sigma, cfg.d, cfg.T)
    lmin = {s.t: s.lambda_min for s in record.snapshots}
    if rep.t1 is not None:
        assert record.beta / math.sqrt(lmin[rep.t1]) <= 1
        earlier = [t for t in lmin if t < rep.t1]
        assert all(record.beta / math.sqrt(lmin[t]) > 1 for t in earlier)
    assert rep.stability_ratio == pytest.approx(1.0)
