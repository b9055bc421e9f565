"""Time the compiled pair sum against the numpy fallback.

    python3 benchmarks/bench_core.py [--sizes 256 1024 4096] [--repeat 5] [--threads 1]
"""

import argparse
import time

import numpy as np

from chaoslab import _fallback, backend, kernels
from chaoslab.gridfn import Grid

try:
    from chaoslab import _core
except ImportError:
    _core = None


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[256, 1024, 4096])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    g = Grid(1, 8.0, 1024)
    table = backend.extended_table(kernels.bounded_confidence_pair(1.0, 0.5, g).force_1d().values)
    rng = np.random.default_rng(0)
    print("N,fallback_s,cython_s,speedup,max_abs_diff")
    for N in args.sizes:
        x = rng.normal(size=N).clip(-7.9, 7.9)
        run = lambda impl: backend.pairwise_mean(x, x, table, g.L, g.h, args.threads, impl)  # noqa: E731
        tf = best_of(lambda: run(_fallback), args.repeat)
        if _core is None:
            print(f"{N},{tf:.4e},nan,nan,nan")
            continue
        tc = best_of(lambda: run(_core), args.repeat)
        diff = float(np.max(np.abs(run(_core) - run(_fallback))))
        print(f"{N},{tf:.4e},{tc:.4e},{tf / tc:.1f},{diff:.1e}")


if __name__ == "__main__":
    main()
