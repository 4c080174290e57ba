"""Benchmark the Monte Carlo kernels: numba fast path vs numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--cycles N] [--episodes N]

Set WHMC_NUMBA=0 to verify the fallback selection; this script always
times both paths explicitly through the force_numpy switch.
"""

import argparse
import time

import numpy as np

from whmc import _kernels
from whmc.config import dbm_to_mw
from whmc.linkmodel import LinkBudget


def time_call(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--cycles", type=int, default=200_000)
    parser.add_argument("--episodes", type=int, default=1_000_000)
    parser.add_argument("--machine-slots", type=int, default=2_000_000)
    args = parser.parse_args()

    budget = LinkBudget(4.0, 915e6, 45.0, 2.9, dbm_to_mw(23.0),
                        dbm_to_mw(-70.0))
    gbar = budget.mean_snr
    lag_values = np.array([3, 7], dtype=np.int64)
    rows = np.cumsum(np.array([[0.2576, 0.7424], [0.4404, 0.5596]]), axis=1)
    init = np.cumsum(np.array([0.3723, 0.6277]))

    print(f"numba available and enabled: {_kernels.using_numba()}")
    if _kernels.using_numba():
        # trigger compilation outside the timed region
        _kernels.sh_episode_delays(10, gbar, 2, 3, 2.0, 1500.0, 1)
        _kernels.cycle_samples(10, gbar, 2, 3, gbar, lag_values, rows, init,
                               2.0, 1500.0, 1)
        _kernels.machine_closed_count(10, gbar, gbar, 2.0, 1500.0, 1)

    cases = [
        ("uplink episodes", args.episodes,
         lambda force: _kernels.sh_episode_delays(
             args.episodes, gbar, 2, 3, 2.0, 1500.0, 42,
             force_numpy=force)),
        ("cycles", args.cycles,
         lambda force: _kernels.cycle_samples(
             args.cycles, gbar, 2, 3, gbar, lag_values, rows, init,
             2.0, 1500.0, 42, force_numpy=force)),
        ("machine slots", args.machine_slots,
         lambda force: _kernels.machine_closed_count(
             args.machine_slots, gbar, gbar, 2.0, 1500.0, 42,
             force_numpy=force)),
    ]

    print(f"{'kernel':<18}{'n':>12}{'numba [s]':>12}{'numpy [s]':>12}"
          f"{'speedup':>10}")
    for name, n, call in cases:
        t_np = time_call(lambda: call(True))
        if _kernels.using_numba():
            t_nb = time_call(lambda: call(False))
            print(f"{name:<18}{n:>12}{t_nb:>12.3f}{t_np:>12.3f}"
                  f"{t_np / t_nb:>10.1f}x")
        else:
            print(f"{name:<18}{n:>12}{'-':>12}{t_np:>12.3f}{'':>10}")


if __name__ == "__main__":
    main()
