import numpy as np
import scipy.linalg as sla

from warpgraph.engine.errors import DimensionMismatch, NotSPD, ProblemTooLarge
from warpgraph.engine.solver.block_matrix import LinearOperatorLike, as_dense

MAX_DENSE_N = 5000


def _factor(A: LinearOperatorLike):
    dense = as_dense(A)
    n = dense.shape[0]
    if dense.ndim != 2 or dense.shape[1] != n:
        raise DimensionMismatch(f"matrix is not square: {dense.shape}")
    if n > MAX_DENSE_N:
        raise ProblemTooLarge(f"dense factorization limited to n <= {MAX_DENSE_N}, got {n}")
    try:
        return sla.cho_factor(dense, lower=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NotSPD(f"Cholesky failed: {e}") from e


def dense_direct_solve(A: LinearOperatorLike, b: np.ndarray) -> np.ndarray:
    """Reference dense Cholesky solve."""
    factor = _factor(A)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != factor[0].shape[0]:
        raise DimensionMismatch(f"right-hand side has {b.shape[0]} rows, matrix {factor[0].shape[0]}")
    return sla.cho_solve(factor, b)


def exact_inverse_factor(A: LinearOperatorLike) -> np.ndarray:
    """Lower Cholesky factor L of A^-1, so that L L^T is the perfect preconditioner."""
    factor = _factor(A)
    inverse = sla.cho_solve(factor, np.eye(factor[0].shape[0]))
    inverse = 0.5 * (inverse + inverse.T)
    try:
        return sla.cholesky(inverse, lower=True)
    except np.linalg.LinAlgError as e:
        raise NotSPD(f"inverse is not numerically SPD: {e}") from e
