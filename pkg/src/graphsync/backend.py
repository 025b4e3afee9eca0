"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is picked once at import time. Setting ``GRAPHSYNC_BACKEND=numpy``
forces the fallback; anything else (including unset) selects numba when it is
importable. Both implementations follow the same contract and are timed
against each other by ``benchmarks/bench_backends.py``.
"""

from __future__ import annotations

import os

import numpy as np


def _sinkhorn_square_numpy(logw, max_iters, tol):
    """Alternating log-domain normalization of ``exp(logw)`` to doubly stochastic.

    Each iteration refreshes the column potentials, then the row potentials,
    so row sums of the iterate are exact and the recorded deviation is the
    worst column-sum error after that iteration. The last iterate then gets
    the standard feasibility rounding (scale overfull columns down, add the
    remaining deficit back as a rank-one outer product), so the returned
    matrix is doubly stochastic to machine precision even when the
    alternating phase stopped short of ``tol``.

    Returns ``(matrix, deviations, iterations)`` where ``deviations`` holds
    the pre-rounding deviation of each completed iteration.
    """
    n = logw.shape[0]
    f = np.zeros(n)
    g = np.zeros(n)
    devs = np.empty(max_iters)
    iters = 0
    for t in range(max_iters):
        shifted = logw + f[:, None]
        m = shifted.max(axis=0)
        g = -(m + np.log(np.exp(shifted - m[None, :]).sum(axis=0)))
        shifted = logw + g[None, :]
        m = shifted.max(axis=1)
        f = -(m + np.log(np.exp(shifted - m[:, None]).sum(axis=1)))
        col_sums = np.exp(logw + f[:, None] + g[None, :]).sum(axis=0)
        dev = np.abs(col_sums - 1.0).max()
        devs[t] = dev
        iters = t + 1
        if dev < tol:
            break
    out = np.exp(logw + f[:, None] + g[None, :])
    out *= np.minimum(1.0, 1.0 / out.sum(axis=0))[None, :]
    row_deficit = np.maximum(1.0 - out.sum(axis=1), 0.0)
    col_deficit = np.maximum(1.0 - out.sum(axis=0), 0.0)
    missing = row_deficit.sum()
    if missing > 0.0:
        out += np.outer(row_deficit, col_deficit) / missing
    return out, devs[:iters], iters


def _sinkhorn_square_loops(logw, max_iters, tol):
    # Same contract as _sinkhorn_square_numpy, written as explicit loops so
    # numba can compile it without allocating temporaries per iteration.
    n = logw.shape[0]
    f = np.zeros(n)
    g = np.zeros(n)
    devs = np.empty(max_iters)
    iters = 0
    for t in range(max_iters):
        for b in range(n):
            m = -np.inf
            for a in range(n):
                v = logw[a, b] + f[a]
                if v > m:
                    m = v
            s = 0.0
            for a in range(n):
                s += np.exp(logw[a, b] + f[a] - m)
            g[b] = -(m + np.log(s))
        for a in range(n):
            m = -np.inf
            for b in range(n):
                v = logw[a, b] + g[b]
                if v > m:
                    m = v
            s = 0.0
            for b in range(n):
                s += np.exp(logw[a, b] + g[b] - m)
            f[a] = -(m + np.log(s))
        dev = 0.0
        for b in range(n):
            s = 0.0
            for a in range(n):
                s += np.exp(logw[a, b] + f[a] + g[b])
            d = abs(s - 1.0)
            if d > dev:
                dev = d
        devs[t] = dev
        iters = t + 1
        if dev < tol:
            break
    out = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            out[a, b] = np.exp(logw[a, b] + f[a] + g[b])
    # Feasibility rounding: cap overfull columns, then spread the remaining
    # row/column deficits as a rank-one correction. Exact marginals result.
    for b in range(n):
        s = 0.0
        for a in range(n):
            s += out[a, b]
        if s > 1.0:
            scale = 1.0 / s
            for a in range(n):
                out[a, b] *= scale
    row_deficit = np.empty(n)
    col_deficit = np.empty(n)
    missing = 0.0
    for a in range(n):
        s = 0.0
        for b in range(n):
            s += out[a, b]
        row_deficit[a] = max(1.0 - s, 0.0)
        missing += row_deficit[a]
    for b in range(n):
        s = 0.0
        for a in range(n):
            s += out[a, b]
        col_deficit[b] = max(1.0 - s, 0.0)
    if missing > 0.0:
        inv = 1.0 / missing
        for a in range(n):
            for b in range(n):
                out[a, b] += row_deficit[a] * col_deficit[b] * inv
    return out, devs[:iters], iters


_FLAG = os.environ.get("GRAPHSYNC_BACKEND", "").strip().lower()
_use_numba = _FLAG != "numpy"

sinkhorn_square_numba = None
if _use_numba:
    try:
        from numba import njit
    except ImportError:
        _use_numba = False
    else:
        sinkhorn_square_numba = njit(cache=True)(_sinkhorn_square_loops)

if _use_numba:
    sinkhorn_square = sinkhorn_square_numba
    BACKEND = "numba"
else:
    sinkhorn_square = _sinkhorn_square_numpy
    BACKEND = "numpy"

sinkhorn_square_numpy = _sinkhorn_square_numpy
