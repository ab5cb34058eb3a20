import json
import math

import numpy as np
import pytest

from linucb_lab.engine import BanditConfig, BetaSchedule, ConfigError, regret
from linucb_lab.harness import (
    CSV_COLUMNS,
    HarnessOptions,
    config_to_dict,
    export,
    merge_summaries,
    parse_config,
    read_series_csv,
    run_montecarlo,
    run_trial,
    serialize_config,
    summary_from_json,
    summary_json,
    write_clt_csv,
)
from linucb_lab.inference import (
    confidence_set_ellipsoidal,
    confidence_set_spherical,
    coverage_rate,
)


def test_minimal_config_defaults():
    cfg, opts = parse_config("d: 3\n")
    assert cfg.d == 3 and cfg.T == 10_000 and cfg.sigma == 0.25
    assert np.array_equal(cfg.theta_star, [1.0, 0.0, 0.0])
    assert cfg.beta_schedule.mode == "stability"
    assert opts == HarnessOptions()


def test_config_rejects_bad_input():
    with pytest.raises(ConfigError):
        parse_config("d: 2\ntheta_star: [2, 0]\n")
    with pytest.raises(ConfigError):
        parse_config("d: 2\nhorizn: 5\n")
    with pytest.raises(ConfigError):
        parse_config("[1, 2]")
    with pytest.raises(ConfigError):
        parse_config("beta: {mode: wild}\n")
    with pytest.raises(ConfigError):
        parse_config("d: 2\nsigma: abc\n")


def test_config_normalizes_near_unit_theta():
    with pytest.warns(UserWarning):
        cfg, _ = parse_config("d: 2\ntheta_star: [1.0000005, 0]\n")
    assert np.linalg.norm(cfg.theta_star) == pytest.approx(1.0, abs=1e-15)


def test_config_round_trip():
    th = np.array([0.36, 0.48, 0.8])
    cfg = BanditConfig(d=3, T=1234, sigma=0.3 + 1e-12, theta_star=th,
                       beta_schedule=BetaSchedule("theory", delta=0.05, L=1.5), ridge=0.7,
                       noise_kind="uniform", base_seed=2**63 + 5, refactor_period=50)
    opts = HarnessOptions(trials=7, workers=2, stride=1.25, delta=0.2)
    text = serialize_config(cfg, opts)
    cfg2, opts2 = parse_config(text)
    assert config_to_dict(cfg2, opts2) == config_to_dict(cfg, opts)
    assert serialize_config(cfg2, opts2) == text
    assert parse_config(json.dumps({"beta": 3.5}))[0].beta == 3.5


def small_config(**kw):
    base = dict(d=2, T=3000, sigma=0.25, theta_star=np.array([0.8, 0.6]))
    base.update(kw)
    return BanditConfig(**base)


def test_run_trial_reproducible():
    a, b = run_trial(small_config(), 3), run_trial(small_config(), 3)
    assert np.array_equal(a.est.theta_hat, b.est.theta_hat)
    assert np.array_equal(a.actions, b.actions) and np.array_equal(a.rewards, b.rewards)
    c = run_trial(small_config(), 4)
    assert not np.array_equal(a.actions, c.actions)


def test_run_trial_single_round():
    rec = run_trial(small_config(T=1), 0)
    assert rec.actions.shape == (1, 2) and rec.rewards.shape == (1,)
    assert rec.snapshots[-1].t == 1


def test_run_trial_zero_regret():
    th = np.array([0.8, 0.6])
    rec = run_trial(small_config(sigma=0.0, theta_hat0=th, beta_schedule=BetaSchedule("constant", 0.0)), 0)
    assert abs(rec.regret) < 1e-9


def test_record_invariants():
    rec = run_trial(small_config(d=3, theta_star=np.array([0.0, 0.6, 0.8])), 1)
    assert rec.actions.shape == (3000, 3)
    assert np.allclose(rec.rewards, rec.actions @ rec.config.theta_star + rec.noise, atol=1e-14)
    assert np.trace(rec.cov.lambda_matrix) == pytest.approx(3 + 3000, abs=1e-6)
    assert np.allclose(rec.est.b_vec, rec.actions.T @ rec.rewards, atol=1e-8)
    assert np.allclose(rec.est.eta_oracle, rec.actions.T @ rec.noise, atol=1e-8)
    assert rec.regret >= -1e-9
    assert rec.fallback_count == 0


def test_regret_by_hand():
    class Trial:
        config = small_config()
        actions = np.array([[0.8, 0.6], [0.6, -0.8]])

    assert regret(Trial) == pytest.approx(1.0, abs=1e-15)
    Trial.actions = np.array([[0.8, 0.6]] * 3)
    assert regret(Trial) == pytest.approx(0.0, abs=1e-15)


@pytest.fixture(scope="module")
def summary():
    cfg = small_config()
    return cfg, run_montecarlo(cfg, 40, HarnessOptions(trials=40, delta=0.1))


def test_single_trial_summary():
    s = run_montecarlo(small_config(), 1)
    assert s.n_trials == 1 and s.normality_p == []
    assert s.coverage_spherical in (0.0, 1.0)


def test_merge_equivalence(summary):
    cfg, full = summary
    opts = HarnessOptions(trials=20, delta=0.1)
    a = run_montecarlo(cfg, 20, opts)
    b = run_montecarlo(cfg, 20, opts, start=20)
    assert summary_json(merge_summaries([b, a], cfg)) == summary_json(full)


def test_order_and_workers_do_not_matter(summary):
    cfg, full = summary
    perm = list(np.random.default_rng(1).permutation(40))
    shuffled = run_montecarlo(cfg, 40, HarnessOptions(trials=40, delta=0.1), order=perm)
    assert summary_json(shuffled) == summary_json(full)
    parallel = run_montecarlo(cfg, 40, HarnessOptions(trials=40, delta=0.1, workers=2))
    assert summary_json(parallel) == summary_json(full)


def test_coverage_field_is_definitional(summary):
    cfg, s = summary
    sph = [confidence_set_spherical(r.theta_hat, r.sigma2_hat, r.beta, cfg.T, cfg.d, 0.1) for r in s.trials]
    ell = [confidence_set_ellipsoidal(r.theta_hat, r.lambda_matrix, r.sigma2_hat, 0.1) for r in s.trials]
    assert s.coverage_spherical == coverage_rate(sph, cfg.theta_star)
    assert s.coverage_ellipsoidal == coverage_rate(ell, cfg.theta_star)
    assert 0 <= s.coverage_spherical <= 1


def test_summary_json_round_trip(summary, tmp_path):
    _, s = summary
    path = tmp_path / "s.json"
    export(s, "json", path)
    back = summary_from_json(path.read_text())
    assert back.to_dict() == s.to_dict()
    assert "wall_clock_per_trial" not in json.loads(path.read_text())


def test_csv_export(tmp_path):
    rec = run_trial(small_config(), 0)
    path = tmp_path / "series.csv"
    export(rec, "csv", path)
    header, rows = read_series_csv(path)
    assert tuple(header) == CSV_COLUMNS and len(header) == 12
    assert len(rows) == len(rec.snapshots)
    for row, snap in zip(rows, rec.snapshots):
        assert row == [getattr(snap, c) for c in CSV_COLUMNS]


def test_csv_empty_series(tmp_path):
    path = tmp_path / "empty.csv"
    export([], "csv", path)
    assert path.read_text() == ",".join(CSV_COLUMNS) + "\n"


def test_export_errors(summary, tmp_path):
    _, s = summary
    with pytest.raises(ValueError):
        export(s, "csv", tmp_path / "x.csv")
    with pytest.raises(ValueError):
        export(s, "xml", tmp_path / "x.xml")
    with pytest.raises(OSError):
        export(s, "json", tmp_path / "missing" / "x.json")


def test_clt_csv(summary, tmp_path):
    _, s = summary
    path = tmp_path / "clt.csv"
    write_clt_csv(s, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "trial,sigma2_hat,z1" and len(lines) == 41
    first = s.trials[0]
    assert float(lines[1].split(",")[2]) == first.clt[0]


def test_record_json(tmp_path):
    from linucb_lab.harness import snapshots_from_record
    rec = run_trial(small_config(), 2)
    path = tmp_path / "rec.json"
    export(rec, "json", path)
    cfg, beta, snaps = snapshots_from_record(json.loads(path.read_text()))
    assert beta == rec.beta and len(snaps) == len(rec.snapshots)
    for a, b in zip(snaps, rec.snapshots):
        for c in CSV_COLUMNS:
            assert getattr(a, c) == pytest.approx(getattr(b, c), rel=1e-15, abs=1e-300)
