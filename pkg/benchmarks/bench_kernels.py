"""Benchmark the compiled grid kernels against the numpy fallback.

Runs the factored-grid gather (forward) and scatter (backward) at a few
batch sizes and reports per-call wall time plus speedup. Usage:

    python3 benchmarks/bench_kernels.py [--points 4096,16384,65536] [--repeat 30]
"""

import argparse
import time

import numpy as np

from blurfield import _gridnp

try:
    from blurfield import _gridcore
except ImportError:
    _gridcore = None


def make_case(rng, n_points, ranks=(4, 4, 4), res=(64, 64, 64)):
    nx, ny, nz = res
    arrs = (
        rng.normal(size=(ranks[0], nx)),
        rng.normal(size=(ranks[1], ny)),
        rng.normal(size=(ranks[2], nz)),
        rng.normal(size=(ranks[0], ny, nz)),
        rng.normal(size=(ranks[1], nx, nz)),
        rng.normal(size=(ranks[2], nx, ny)),
    )
    idx = (rng.integers(0, nx - 1, size=n_points),
           rng.integers(0, ny - 1, size=n_points),
           rng.integers(0, nz - 1, size=n_points))
    frac = tuple(rng.uniform(size=n_points) for _ in range(3))
    gout = rng.normal(size=(n_points, sum(ranks)))
    return arrs, idx, frac, gout


def bench(fn, repeat):
    fn()  # warm up
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", default="4096,16384,65536")
    ap.add_argument("--repeat", type=int, default=30)
    args = ap.parse_args()
    sizes = [int(s) for s in args.points.split(",")]
    rng = np.random.default_rng(0)

    print(f"{'points':>8} {'op':>8} {'numpy':>12} {'compiled':>12} "
          f"{'speedup':>8}")
    for n in sizes:
        arrs, idx, frac, gout = make_case(rng, n)
        rows = [("forward",
                 lambda m: m.vm_forward(*arrs, *idx, *frac)),
                ("backward",
                 lambda m: m.vm_backward(*arrs, *idx, *frac, gout))]
        for op, call in rows:
            t_np = bench(lambda: call(_gridnp), args.repeat)
            if _gridcore is None:
                print(f"{n:>8} {op:>8} {t_np * 1e3:>10.3f}ms "
                      f"{'n/a':>12} {'':>8}")
                continue
            t_c = bench(lambda: call(_gridcore), args.repeat)
            print(f"{n:>8} {op:>8} {t_np * 1e3:>10.3f}ms "
                  f"{t_c * 1e3:>10.3f}ms {t_np / t_c:>7.2f}x")
    if _gridcore is None:
        print("compiled extension unavailable; showing numpy only")


if __name__ == "__main__":
    main()
