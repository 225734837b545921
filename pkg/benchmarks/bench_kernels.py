"""Benchmark the compiled cyclic-Jacobi eigensolver against the pure-Python
fallback on batches of random symmetric matrices.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from spdshift import _kernels
from spdshift._kernels import _jacobi_py


def _batch(rng, n, d):
    a = rng.standard_normal((n, d, d))
    return 0.5 * (a + np.transpose(a, (0, 2, 1)))


def _time(fn, stack, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(stack)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if _kernels.BACKEND != "cython":
        print("compiled backend unavailable; nothing to compare")
        return

    from spdshift._kernels import _jacobi

    rng = np.random.default_rng(0)
    print(f"{'n':>6} {'dim':>4} {'python (s)':>12} {'cython (s)':>12} {'speedup':>8}")
    for n, d in [(2000, 2), (1000, 4), (500, 8), (100, 16)]:
        stack = _batch(rng, n, d)
        vp, _ = _jacobi_py.jacobi_eigh_batch(stack)
        vc, _ = _jacobi.jacobi_eigh_batch(stack)
        assert np.allclose(vp, vc, atol=1e-12), "backends disagree"
        tp = _time(_jacobi_py.jacobi_eigh_batch, stack, args.repeats)
        tc = _time(_jacobi.jacobi_eigh_batch, stack, args.repeats)
        print(f"{n:>6} {d:>4} {tp:>12.4f} {tc:>12.4f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
