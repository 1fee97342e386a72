"""Compiled kernels vs the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from snpdensity import _pykernels
from snpdensity.indexset import build_index_set

try:
    from snpdensity import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    pts = rng.standard_normal((100_000, 3))
    idx = build_index_set(3, 10).indices
    lorenz = rng.standard_normal((100_000, 3)) * 0.3 + 1.0
    return {
        "hermite_table 1e5 x K=10": lambda k: k.hermite_table(pts[:, 0], 10),
        "basis_matrix 1e5 x M=282": lambda k: k.basis_matrix(pts, idx),
        "lorenz_rk4 1e5 x 63 steps": lambda k: k.lorenz_rk4(lorenz, 10.0, 28.0, 8.0 / 3.0, 0.01, 63, 0.01),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, call in cases(rng).items():
        py = min(timeit.repeat(lambda: call(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:28s} {py:11.1f} {'n/a':>12s}")
            continue
        cy = min(timeit.repeat(lambda: call(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:28s} {py:11.1f} {cy:12.1f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
