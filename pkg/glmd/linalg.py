"""Dense symmetric-positive-definite kernel: Cholesky, solves, inverse, extreme eigenvalues.

Matrices are plain ``numpy`` arrays.  ``spd_matrix`` validates and
symmetrizes a candidate; ``cholesky`` returns a :class:`CholeskyFactor`
that the solve/inverse helpers consume.  No pivoting or regularisation is
applied: a non-positive pivot surfaces as :class:`NotPositiveDefiniteError`
and the caller decides what to do.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from glmd.errors import ArgumentError, ConvergenceError, NotPositiveDefiniteError


PIVOT_RTOL = 1e-14
EIGEN_MAX_ITERATIONS = 10_000


def symmetrize_upper(a: np.ndarray) -> np.ndarray:
    """Return *a* with its strict lower triangle replaced by the mirrored upper one."""

    upper = np.triu(a)
    return upper + np.triu(a, 1).T


def spd_matrix(a: np.ndarray) -> np.ndarray:
    """Validate a candidate SPD matrix and return a symmetrized float64 copy."""

    a = np.array(a, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ArgumentError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ArgumentError("matrix contains non-finite entries")
    a = 0.5 * (a + a.T)
    if np.any(np.diag(a) <= 0):
        raise ArgumentError("SPD matrix must have a positive diagonal")
    return a


def pairwise_sum(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Sum equally shaped arrays by recursive halving in the given order."""

    if not parts:
        raise ArgumentError("nothing to sum")
    if len(parts) == 1:
        return np.array(parts[0], dtype=float, copy=True)
    mid = len(parts) // 2
    return pairwise_sum(parts[:mid]) + pairwise_sum(parts[mid:])


def pairwise_rows(terms: np.ndarray) -> np.ndarray:
    """Sum *terms* over axis 0 with a fixed adjacent-pair tree.

    Each level adds rows ``(0, 1), (2, 3), ...`` left to right; an odd last
    row is carried up unchanged.  The result depends only on the row order.
    """

    level = np.asarray(terms, dtype=float)
    if level.shape[0] == 0:
        return np.zeros(level.shape[1:])
    while level.shape[0] > 1:
        even = level.shape[0] - level.shape[0] % 2
        paired = level[0:even:2] + level[1:even:2]
        level = np.concatenate([paired, level[even:]]) if even < level.shape[0] else paired
    return level[0].copy()


# Power of two, so row blocks are whole subtrees of the pairwise tree.
GRAM_BLOCK_ROWS = 256


def pairwise_gram(design: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_i w_i z_i z_i'`` reduced with :func:`pairwise_rows`, exactly symmetric.

    Outer products are formed a block of rows at a time; the block partials
    are then reduced with the same tree, which gives the unblocked result.
    """

    design = np.asarray(design, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n, p = design.shape
    if n == 0:
        return np.zeros((p, p))
    partials = []
    for start in range(0, n, GRAM_BLOCK_ROWS):
        z = design[start : start + GRAM_BLOCK_ROWS]
        zw = z * weights[start : start + GRAM_BLOCK_ROWS, None]
        partials.append(pairwise_rows(zw[:, :, None] * z[:, None, :]))
    return symmetrize_upper(pairwise_rows(np.stack(partials)))


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    lower: np.ndarray

    @property
    def p(self) -> int:
        return self.lower.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def cholesky(a: np.ndarray) -> CholeskyFactor:
    """Right-looking Cholesky factorization ``a = L L'`` without pivoting."""

    work = np.array(a, dtype=float, copy=True)
    if work.ndim != 2 or work.shape[0] != work.shape[1]:
        raise ArgumentError(f"expected a square matrix, got shape {work.shape}")
    if not np.all(np.isfinite(work)):
        raise ArgumentError("matrix contains non-finite entries")

    p = work.shape[0]
    threshold = p * PIVOT_RTOL * float(np.max(np.diag(work)))
    lower = np.zeros_like(work)
    for k in range(p):
        pivot = work[k, k]
        if not pivot > threshold:
            raise NotPositiveDefiniteError(
                f"matrix is not positive definite: pivot {k} = {pivot:.6g}",
                pivot_index=k,
                pivot=float(pivot),
            )
        diag = np.sqrt(pivot)
        lower[k, k] = diag
        column = work[k + 1 :, k] / diag
        lower[k + 1 :, k] = column
        work[k + 1 :, k + 1 :] -= np.outer(column, column)
    return CholeskyFactor(lower)


def spd_solve(factor: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Solve ``(L L') x = b`` by forward then backward substitution."""

    b = np.asarray(b, dtype=float)
    if b.shape[0] != factor.p:
        raise ArgumentError(f"right-hand side has length {b.shape[0]}, expected {factor.p}")
    y = solve_triangular(factor.lower, b, lower=True, check_finite=False)
    return solve_triangular(factor.lower.T, y, lower=False, check_finite=False)


def spd_inverse(factor: CholeskyFactor) -> np.ndarray:
    inverse = spd_solve(factor, np.eye(factor.p))
    return 0.5 * (inverse + inverse.T)


def _rayleigh_iteration(
    a: np.ndarray,
    apply: Callable[[np.ndarray], np.ndarray],
    start: np.ndarray,
    tol: float,
    max_iterations: int,
) -> float:
    vec = start / np.linalg.norm(start)
    theta = 0.0
    for _ in range(max_iterations + 1):
        av = a @ vec
        theta = float(vec @ av)
        if np.linalg.norm(av - theta * vec) <= tol * abs(theta):
            return theta
        nxt = apply(vec)
        vec = nxt / np.linalg.norm(nxt)
    raise ConvergenceError(
        f"eigenvalue iteration did not converge in {max_iterations} steps",
        last_iterate=vec,
        last_value=theta,
    )


def eigen_extremes(
    a: np.ndarray, tol: float = 1e-10, *, max_iterations: int = EIGEN_MAX_ITERATIONS
) -> Tuple[float, float]:
    """Return ``(lambda_min, lambda_max)`` of a positive definite matrix.

    ``lambda_max`` comes from power iteration, ``lambda_min`` from inverse
    iteration through the Cholesky factor.  Both stop once the eigen-residual
    ``||A v - theta v||`` drops below ``tol * theta``.  Each iteration is run
    from the normalized all-ones vector and restarted from the alternating-sign
    vector, keeping the more extreme value, so a start vector that happens to
    be orthogonal to the target eigenvector does not go unnoticed.
    """

    a = spd_matrix(a)
    factor = cholesky(a)
    p = a.shape[0]
    starts = [np.ones(p), np.where(np.arange(p) % 2 == 0, 1.0, -1.0)]

    def power(v: np.ndarray) -> np.ndarray:
        return a @ v

    def inverse(v: np.ndarray) -> np.ndarray:
        return spd_solve(factor, v)

    lam_max = max(_rayleigh_iteration(a, power, s, tol, max_iterations) for s in starts)
    lam_min = min(_rayleigh_iteration(a, inverse, s, tol, max_iterations) for s in starts)
    return min(lam_min, lam_max), lam_max
