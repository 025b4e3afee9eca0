"""Benchmark the numba Sinkhorn kernel against the pure-numpy twin.

Runs the same log-domain projection through both implementations across a
range of matrix sizes and prints per-call timings plus the speedup. The
package picks its backend at import time (GRAPHSYNC_BACKEND=numpy forces the
fallback); this script imports both kernels directly so one process can
compare them.

Usage: python benchmarks/bench_backends.py
"""

import time

import numpy as np

from graphsync.backend import sinkhorn_square_numba, sinkhorn_square_numpy


def time_kernel(kernel, logw, max_iters, tol, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        kernel(logw, max_iters, tol)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    rng = np.random.default_rng(0)
    cases = [
        (8, 200, 2000),
        (16, 200, 1000),
        (32, 200, 400),
        (64, 100, 100),
        (128, 100, 30),
    ]
    if sinkhorn_square_numba is None:
        print("numba unavailable; timing the numpy kernel only")
    else:
        # trigger compilation outside the timed region
        sinkhorn_square_numba(np.zeros((4, 4)), 5, 1e-9)
    print(f"{'size':>6} {'iters':>6} {'numpy':>12} {'numba':>12} {'speedup':>8}")
    for size, iters, repeats in cases:
        logw = rng.uniform(-10, 10, (size, size)) / 0.05
        t_numpy = time_kernel(sinkhorn_square_numpy, logw, iters, 1e-12, repeats)
        if sinkhorn_square_numba is None:
            print(f"{size:>6} {iters:>6} {t_numpy * 1e6:>10.1f}us {'-':>12} {'-':>8}")
            continue
        t_numba = time_kernel(sinkhorn_square_numba, logw, iters, 1e-12, repeats)
        out_numpy, _, _ = sinkhorn_square_numpy(logw, iters, 1e-12)
        out_numba, _, _ = sinkhorn_square_numba(logw, iters, 1e-12)
        agree = np.abs(out_numpy - out_numba).max()
        print(
            f"{size:>6} {iters:>6} {t_numpy * 1e6:>10.1f}us {t_numba * 1e6:>10.1f}us "
            f"{t_numpy / t_numba:>7.1f}x  (max diff {agree:.1e})"
        )


if __name__ == "__main__":
    main()
