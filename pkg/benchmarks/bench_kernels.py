"""Time the compiled and numpy kernel backends on the 101 x 101 shear grid.

Usage: python benchmarks/bench_kernels.py [--repeat 20] [--n 101]
"""

import argparse
import math
import timeit

import numpy as np

from strongloc import kernels
from strongloc.fields import RegularField2D

LAM, MU = 8.0, 2.0  # E = 5.6, nu = 0.4


def make_inputs(n):
    xs = np.linspace(0.0, 1.0, n)
    X = np.stack(np.meshgrid(xs, xs, indexing="ij"), -1).reshape(-1, 2)
    w = np.full(len(X), 1.0 / len(X))
    sp = 0.75 + 0.25 * (2 * X[:, 1] - 1) ** 2
    alpha = math.radians(80.0)
    n_vec = np.array([math.cos(alpha), math.sin(alpha)])
    t_vec = np.array([-math.sin(alpha), math.cos(alpha)])
    field = RegularField2D.glorot(seed=0)
    dissipation = (X, w, sp, n_vec, t_vec, 0.5, 0.1, 100.0, 0.3, -0.1, 1.0)
    elastic = (field.theta, field.widths, X, w, LAM, MU)
    return dissipation, elastic


def bench(fn, args, repeat):
    fn(*args)  # warm up
    times = timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)
    return min(times), float(np.median(times))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--n", type=int, default=101, help="grid points per side")
    args = ap.parse_args(argv)

    dissipation, elastic = make_inputs(args.n)
    mods = kernels.backends()
    if "cython" not in mods:
        print("compiled extension not built; timing the numpy backend only")

    print(f"grid {args.n}x{args.n}, best and median of {args.repeat}")
    print(f"{'kernel':<18}{'backend':<10}{'best ms':>10}{'median ms':>12}{'speedup':>10}")
    for kernel, inputs in (("band_dissipation", dissipation), ("mlp_elastic", elastic)):
        base = None
        for name in ("python", "cython"):
            if name not in mods:
                continue
            best, med = bench(getattr(mods[name], kernel), inputs, args.repeat)
            base = base or best
            print(f"{kernel:<18}{name:<10}{1e3 * best:>10.3f}{1e3 * med:>12.3f}{base / best:>9.2f}x")


if __name__ == "__main__":
    main()
