"""Compare the compiled and pure-Python replay kernels.

    python benchmarks/bench_replay.py --seconds 3600 --repeats 3

Reports events per second for the raw kernel and for the full
replay plus feature extraction, and checks that both backends agree.
"""

import argparse
import time

import numpy as np

from lobmm.kernels import KERNELS, get_kernel
from lobmm.pipeline import NS_PER_SECOND, replay_to_snapshots
from lobmm.synthetic import synthetic_day


def _best(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seconds", type=int, default=3600, help="length of the synthetic day")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args(argv)

    ticks = synthetic_day(args.seconds, seed=args.seed)
    n = len(ticks)
    arrays = (ticks.timestamp, ticks.kind, ticks.side, ticks.price, ticks.quantity, ticks.order_index)
    print(f"{n} events over {args.seconds} s; backends: {', '.join(sorted(KERNELS))}")

    results = {}
    for name in sorted(KERNELS):
        kernel = get_kernel(name)
        kernel_s = _best(lambda: kernel(*arrays, ticks.tick_size, NS_PER_SECOND, 15), args.repeats)
        full_s = _best(lambda: replay_to_snapshots(ticks, backend=name), args.repeats)
        results[name] = (kernel_s, full_s)
        print(f"{name:>9}: kernel {n / kernel_s:>12,.0f} ev/s ({kernel_s:.3f} s)   "
              f"replay+features {n / full_s:>12,.0f} ev/s ({full_s:.3f} s)")

    if len(results) == 2:
        kp, fp = results["python"]
        kc, fc = results["compiled"]
        print(f"  speedup: kernel {kp / kc:.1f}x, replay+features {fp / fc:.1f}x")
        a = replay_to_snapshots(ticks, backend="python")
        b = replay_to_snapshots(ticks, backend="compiled")
        same = all(np.array_equal(getattr(a, k), getattr(b, k))
                   for k in ("features", "bid_px", "bid_qty", "ask_px", "ask_qty", "trade_qty"))
        print(f"  outputs bit-identical: {same}")


if __name__ == "__main__":
    main()
