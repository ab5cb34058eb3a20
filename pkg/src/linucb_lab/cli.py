"""Command line entry point: simulate, montecarlo, diagnose, coverage."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

import yaml

from . import backend
from .diagnostics import phase_report
from .engine import BETA_MODES, NOISE_KINDS
from .harness import (
    config_from_dict,
    export,
    run_montecarlo,
    run_trial,
    snapshots_from_record,
    summary_json,
    write_clt_csv,
)

# flag dest -> config key
FLAG_KEYS = {
    "d": "d", "horizon": "horizon", "sigma": "sigma", "trials": "trials", "seed": "seed",
    "delta": "delta", "noise": "noise", "workers": "workers", "stride": "stride",
    "ridge": "ridge", "refactor_period": "refactor_period",
}


def _theta(text):
    return [float(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file (flags override it)")
    common.add_argument("--d", type=int)
    common.add_argument("--horizon", type=int)
    common.add_argument("--sigma", type=float)
    common.add_argument("--beta", type=float, help="constant beta (implies --beta-mode constant)")
    common.add_argument("--beta-mode", choices=BETA_MODES)
    common.add_argument("--beta-c", type=float, help="constant c of the stability schedule")
    common.add_argument("--trials", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--delta", type=float, help="confidence level for coverage")
    common.add_argument("--noise", choices=NOISE_KINDS)
    common.add_argument("--ridge", type=float)
    common.add_argument("--refactor-period", type=int)
    common.add_argument("--theta-star", type=_theta, help="comma separated unit vector")
    common.add_argument("--workers", type=int)
    common.add_argument("--stride", type=float, help="geometric ratio of the snapshot grid")
    common.add_argument("--out", help="output path (default stdout)")

    p = argparse.ArgumentParser(prog="linucb-lab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="one trial, CSV time series")
    s.add_argument("--trial-index", type=int, default=0)
    s.add_argument("--record", help="also store the trial as JSON for `diagnose`")
    m = sub.add_parser("montecarlo", parents=[common], help="N trials, JSON summary")
    m.add_argument("--clt-csv", help="write pooled per-trial CLT samples here")
    g = sub.add_parser("diagnose", parents=[common], help="phase report for a stored or fresh trial")
    g.add_argument("--record", help="trial JSON written by `simulate --record`")
    g.add_argument("--trial-index", type=int, default=0)
    g.add_argument("--align-const", type=float, default=10.0)
    g.add_argument("--delta-band", type=float, default=0.25)
    sub.add_parser("coverage", parents=[common], help="coverage fractions only")
    return p


def resolve_config(args):
    doc = {}
    if args.config:
        with open(args.config) as fh:
            loaded = yaml.safe_load(fh)
        doc.update(loaded or {})
    for dest, key in FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val is not None:
            doc[key] = val
    if args.theta_star is not None:
        doc["theta_star"] = args.theta_star
    beta = doc.get("beta", {})
    beta = dict(beta) if isinstance(beta, dict) else {"mode": "constant", "value": beta}
    if args.beta is not None:
        beta["value"] = args.beta
        beta["mode"] = "constant"
    if args.beta_mode is not None:
        beta["mode"] = args.beta_mode
    if args.beta_c is not None:
        beta["c"] = args.beta_c
    if beta:
        doc["beta"] = beta
    return config_from_dict(doc)


def _emit(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args):
    config, opts = resolve_config(args)
    record = run_trial(config, args.trial_index, opts.stride)
    export(record, "csv", args.out or sys.stdout)
    if args.record:
        export(record, "json", args.record)


def cmd_montecarlo(args):
    config, opts = resolve_config(args)
    summary = run_montecarlo(config, opts.trials, opts)
    _emit(summary_json(summary), args.out)
    if args.clt_csv:
        write_clt_csv(summary, args.clt_csv)
    print(f"backend={backend.NAME} trials={summary.n_trials} "
          f"seconds/trial={summary.wall_clock_per_trial:.4g}", file=sys.stderr)


def cmd_diagnose(args):
    if args.record:
        with open(args.record) as fh:
            config, beta, series = snapshots_from_record(json.load(fh))
    else:
        config, opts = resolve_config(args)
        record = run_trial(config, args.trial_index, opts.stride)
        beta, series = record.beta, record.snapshots
    rep = phase_report(series, beta, config.sigma, config.d, config.T, args.align_const, args.delta_band)
    last = series[-1]
    doc = asdict(rep)
    doc.update(beta=beta, T=config.T, d=config.d, final_ratio_2d=last.ratio_2d,
               final_delta=[float(v) for v in last.delta_i], weighted_err_max=max(s.weighted_err for s in series))
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)


def cmd_coverage(args):
    config, opts = resolve_config(args)
    s = run_montecarlo(config, opts.trials, opts, with_grid=False)
    doc = {"n_trials": s.n_trials, "delta": s.delta, "beta": s.beta,
           "coverage_spherical": s.coverage_spherical, "coverage_ellipsoidal": s.coverage_ellipsoidal}
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)


COMMANDS = {"simulate": cmd_simulate, "montecarlo": cmd_montecarlo,
            "diagnose": cmd_diagnose, "coverage": cmd_coverage}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except Exception as exc:  # report every failure as one machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
