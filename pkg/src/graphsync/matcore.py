"""Dense-matrix kernels: Sinkhorn projection, discretization, fixtures.

All matrices are plain float64 numpy arrays, row-major, finite. The module
is the numeric substrate for the rest of the package; every function here is
a pure function of its inputs and safe to call concurrently.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import backend


@dataclasses.dataclass(frozen=True)
class SinkhornParams:
    """Entropic projection settings.

    tau is the regularization temperature (smaller means sharper assignments),
    max_iters caps the alternating normalizations, and tol is the convergence
    threshold on the worst marginal deviation.
    """

    tau: float = 0.05
    max_iters: int = 20
    tol: float = 1e-6

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")


@dataclasses.dataclass(frozen=True)
class SinkhornResult:
    """Convergence record for one projection: achieved deviation and trace."""

    converged: bool
    iterations: int
    deviation: float
    deviations: np.ndarray


def sinkhorn(scores, params: SinkhornParams | None = None, full_output: bool = False):
    """Project a score matrix to a relaxed assignment by entropic normalization.

    Rows and columns of ``exp(scores / tau)`` are alternately normalized in
    the log domain, so arbitrarily large score magnitudes never overflow.
    The last iterate receives a feasibility rounding (overfull columns are
    capped and the leftover deficit is spread as a rank-one correction), so
    square outputs are doubly stochastic to machine precision even when the
    alternating phase stalls; ``converged`` and ``deviation`` still describe
    the honest pre-rounding iterate. Wide inputs (n < k, the universe case)
    are padded with uniform slack rows, projected as a square problem, and
    stripped again: the result then has exact unit row sums and column sums
    at most 1.

    Args:
        scores: (n, k) finite score matrix with n <= k.
        params: projection settings; defaults to ``SinkhornParams()``.
        full_output: when true, also return a :class:`SinkhornResult`.

    Returns:
        The (n, k) relaxed assignment, or ``(assignment, result)`` when
        ``full_output`` is set. Hitting ``max_iters`` before ``tol`` is not
        an error; the rounded last iterate is returned with
        ``converged=False`` and the achieved deviation.
    """
    if params is None:
        params = SinkhornParams()
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {scores.shape}")
    n, k = scores.shape
    if n > k:
        raise ValueError(
            f"matrix has more rows than columns ({n} > {k}); "
            "the target side must be at least as large as the source"
        )
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite entries")
    logw = scores / params.tau
    if n < k:
        logw = np.vstack([logw, np.zeros((k - n, k))])
    logw = np.ascontiguousarray(logw)
    out, devs, iters = backend.sinkhorn_square(logw, params.max_iters, params.tol)
    out = np.ascontiguousarray(out[:n, :])
    if not full_output:
        return out
    deviation = float(devs[-1])
    result = SinkhornResult(
        converged=deviation < params.tol,
        iterations=int(iters),
        deviation=deviation,
        deviations=np.asarray(devs),
    )
    return out, result


def discretize(relaxed):
    """Round a relaxed assignment to the best binary partial permutation.

    Solves the linear assignment problem maximizing the total selected score,
    so the output is the optimal rounding rather than a greedy row argmax.
    Exact ties are nudged toward low (row, column) cells by a bias far below
    any meaningful score difference; it underflows to zero past ~50 cells,
    where the assignment solver's own deterministic choice applies.

    The output is binary with row and column sums at most 1; when the input
    has no more rows than columns, every row is assigned.
    """
    relaxed = np.asarray(relaxed, dtype=np.float64)
    if relaxed.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {relaxed.shape}")
    if not np.all(np.isfinite(relaxed)):
        raise ValueError("input contains non-finite entries")
    n, k = relaxed.shape
    scale = max(1.0, float(np.abs(relaxed).max()))
    flat = np.arange(n * k, dtype=np.float64).reshape(n, k)
    bias = scale * np.power(2.0, -40.0 - flat)
    rows, cols = linear_sum_assignment(relaxed + bias, maximize=True)
    out = np.zeros((n, k))
    out[rows, cols] = 1.0
    return out


def frobenius_inner(a, b) -> float:
    """Frobenius inner product: the sum of elementwise products."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float((a * b).sum())


def save_matrix(path, matrix) -> None:
    """Write a matrix fixture: 'rows cols' header then row-major values.

    Values carry 17 significant digits so float64 round-trips exactly.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {matrix.shape}")
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for row in matrix:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_matrix(path) -> np.ndarray:
    """Read a matrix fixture written by :func:`save_matrix`."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: malformed fixture header")
        rows, cols = int(header[0]), int(header[1])
        values = fh.read().split()
    if len(values) != rows * cols:
        raise ValueError(
            f"{path}: expected {rows * cols} values, found {len(values)}"
        )
    return np.array(values, dtype=np.float64).reshape(rows, cols)
