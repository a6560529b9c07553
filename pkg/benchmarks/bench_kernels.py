"""Time the compiled and pure-Python kernels on identical inputs.

    python benchmarks/bench_kernels.py [--points 20000] [--repeat 3]
"""
import argparse
import math
import time

import numpy as np

from geosmooth import kernels
from geosmooth.drivers import run_biaxial

TABLE = np.array([[1e7, 0.3, 1e4, math.radians(30.0), math.radians(30.0), 0.0, 1.0]])


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n = args.points
    stress = -np.abs(rng.normal(size=(n, 4))) * 1e5
    deps = rng.normal(size=(n, 4)) * 3e-3
    deps[:, 2] = 0.0
    kappa = np.zeros(n)
    mat = np.zeros(n, dtype=np.int64)
    ne = n // 4
    B = rng.normal(size=(ne, 4, 3, 8))
    D = rng.normal(size=(ne, 4, 3, 3))
    w = rng.uniform(size=(ne, 4))

    backends = kernels.backends()
    rows = []
    for name, impl in backends.items():
        t_mat = best_of(lambda: impl.material_update(stress, deps, kappa, mat, TABLE), args.repeat)
        t_k = best_of(lambda: impl.cell_stiffness(B, D, w), args.repeat)
        saved = kernels._impl
        kernels._impl = impl
        try:
            t_run = best_of(run_biaxial, 1)
        finally:
            kernels._impl = saved
        rows.append((name, t_mat, t_k, t_run))

    print(f"{'backend':<10}{'stress update':>16}{'stiffness':>12}{'biaxial run':>14}")
    for name, a, b, c in rows:
        print(f"{name:<10}{a:>14.4f} s{b:>10.4f} s{c:>12.3f} s")
    if len(rows) == 2:
        (_, pa, pb, pc), (_, ca, cb, cc) = rows
        print(f"{'speed-up':<10}{pa / ca:>15.1f}x{pb / cb:>11.1f}x{pc / cc:>13.1f}x")
    else:
        print("compiled extension not available; only the fallback was timed")


if __name__ == "__main__":
    main()
