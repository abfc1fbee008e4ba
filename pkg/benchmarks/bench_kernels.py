"""Compare the numba and numpy backends of the subset-enumeration kernels.

Usage: ``python3 benchmarks/bench_kernels.py [--repeat R]``.  Each kernel is
called once on both paths to compile and check agreement, then timed with
``timeit``.
"""
import argparse
import timeit

import numpy as np

from qsc import _kernels


def cases(rng):
    n = 14
    sq = rng.random(1 << n)
    tabs = rng.integers(0, 1 << 10, (400, 4))
    free = rng.integers(0, 1 << 14, 200)
    v4 = rng.standard_normal((2, 3 ** 5, 3, 3 ** 4 * 4)) + 0j
    op4 = rng.standard_normal((2, 3, 2, 3)) + 0j
    vec = rng.standard_normal((2, 4096, 8)) + 0j
    o = rng.integers(0, 4096, 20000)
    i = rng.integers(0, 4096, 20000)
    scale = rng.random(20000)
    blocks = rng.standard_normal((20000, 2, 2)) + 0j
    return {
        "disjoint_pair_sum (n=14)": lambda u: _kernels.disjoint_pair_sum(sq, 1.2, 0.8, 0.1, use_numba=u),
        "product_pairs (400x400)": lambda u: _kernels.product_pairs(tabs, tabs, use_numba=u),
        "submask_enum (200 masks)": lambda u: _kernels.submask_enum(free, use_numba=u),
        "local_apply (dim 2*3^10)": lambda u: _kernels.local_apply(v4, op4, use_numba=u),
        "scatter_apply (20000 blocks)": lambda u: _kernels.scatter_apply(
            np.zeros_like(vec), vec, o, i, scale, blocks, use_numba=u),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if not _kernels._HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':30s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        if not _same(fn(False), fn(True)):
            raise SystemExit(f"{name}: backends disagree")
        t_np = min(timeit.repeat(lambda: fn(False), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fn(True), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:30s} {t_np:12.2f} {t_nb:12.2f} {t_np / t_nb:8.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
