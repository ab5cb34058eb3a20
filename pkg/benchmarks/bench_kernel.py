"""Time the compiled trial loop against the pure-Python fallback.

    python3 benchmarks/bench_kernel.py --d 2 3 5 --horizon 2000
"""
import argparse
import time

import numpy as np

from linucb_lab import backend
from linucb_lab.engine import BanditConfig
from linucb_lab.rng import draw_streams


def loop_args(cfg, index):
    s = draw_streams(cfg, index)
    return (cfg.d, cfg.T, cfg.beta, cfg.ridge, cfg.theta_star, s.theta_hat0, s.noise, s.fallback,
            cfg.refactor_period, np.array([cfg.T], dtype=np.int64))


def time_loop(loop, cfg, repeats):
    best = float("inf")
    for i in range(repeats):
        args = loop_args(cfg, i)
        start = time.perf_counter()
        loop(*args)
        best = min(best, time.perf_counter() - start)
    return best / cfg.T * 1e6


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--d", type=int, nargs="+", default=[2, 3, 5])
    parser.add_argument("--horizon", type=int, default=2000)
    parser.add_argument("--python-horizon", type=int, default=None,
                        help="shorter horizon for the slow fallback (default: same)")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    if backend.compiled_loop is None:
        print("compiled extension not built; only the Python loop is timed")
    print(f"{'d':>3} {'compiled us/step':>17} {'python us/step':>15} {'speedup':>8}")
    for d in args.d:
        th = np.zeros(d)
        th[0] = 1.0
        cfg = BanditConfig(d=d, T=args.horizon, sigma=0.25, theta_star=th)
        py_cfg = BanditConfig(d=d, T=args.python_horizon or args.horizon, sigma=0.25, theta_star=th)
        py = time_loop(backend.python_loop, py_cfg, args.repeats)
        if backend.compiled_loop is None:
            print(f"{d:>3} {'-':>17} {py:>15.1f} {'-':>8}")
            continue
        c = time_loop(backend.compiled_loop, cfg, args.repeats)
        print(f"{d:>3} {c:>17.2f} {py:>15.1f} {py / c:>8.0f}x")


if __name__ == "__main__":
    main()
