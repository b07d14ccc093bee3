"""Gradients of a loss on the solution of A x = b with respect to A and b."""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from warpgraph.engine.errors import BreakdownError, DimensionMismatch, NonFinite
from warpgraph.engine.solver.block_matrix import (
    BlockSparseMatrix,
    LinearOperatorLike,
    operator_of,
)
from warpgraph.engine.solver.pcg import pcg_solve
from warpgraph.engine.solver.preconditioners import IdentityPreconditioner, Preconditioner

DEFAULT_STEP = 1e-6
DEFAULT_FLOOR = 1e-12


@dataclass
class SolveGradients:
    """``grad_A`` is restricted to the stored lower triangle of A.

    Off-diagonal entries hold g_ij + g_ji since each stands for both
    symmetric positions; ``grad_A_dense`` is the unrestricted -grad_b x^T.
    """

    grad_b: np.ndarray
    grad_A: sp.csr_matrix
    grad_A_dense: Optional[np.ndarray] = None


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    worst_index: int
    numeric_grad: np.ndarray

    def passed(self, threshold: float) -> bool:
        return self.max_rel_error < threshold


def _lower_pattern(A: LinearOperatorLike) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(A, BlockSparseMatrix):
        return A.lower_pattern()
    lower = sp.tril(sp.coo_matrix(A))
    return lower.row.astype(np.int64), lower.col.astype(np.int64)


def solve_adjoint(
    A: LinearOperatorLike,
    x: np.ndarray,
    grad_x: np.ndarray,
    M: Optional[Preconditioner] = None,
    tol: float = 1e-10,
    max_iters: Optional[int] = None,
    with_dense: bool = False,
) -> SolveGradients:
    """grad_b = A^-1 grad_x by PCG, grad_A = -grad_b x^T."""
    _, n = operator_of(A)
    x = np.asarray(x, dtype=np.float64)
    grad_x = np.asarray(grad_x, dtype=np.float64)
    if x.shape != (n,) or grad_x.shape != (n,):
        raise DimensionMismatch(
            f"x {x.shape} and grad_x {grad_x.shape} must both be ({n},)"
        )
    grad_b, _ = pcg_solve(A, grad_x, M, max_iters=max_iters or 10 * n, tol=tol)

    rows, cols = _lower_pattern(A)
    values = -grad_b[rows] * x[cols]
    off = rows != cols
    values[off] -= grad_b[cols[off]] * x[rows[off]]
    grad_A = sp.csr_matrix((values, (rows, cols)), shape=(n, n))
    dense = -np.outer(grad_b, x) if with_dense else None
    return SolveGradients(grad_b=grad_b, grad_A=grad_A, grad_A_dense=dense)


def unrolled_pcg_grad(
    A: LinearOperatorLike,
    b: np.ndarray,
    M: Optional[Preconditioner],
    k: int,
    grad_x: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Reverse-mode sweep through k recorded PCG iterations (M held fixed).

    Returns (grad_b, grad_A) for the map (A, b) -> x_k with A entering only
    through products A p. grad_A is the dense gradient with respect to a free,
    non-symmetric A, comparable with -grad_b x^T; for a symmetric perturbation
    use grad_A + grad_A.T off the diagonal. The tape ends early if the
    recurrence reaches an exact zero residual.
    """
    matvec, n = operator_of(A)
    b = np.asarray(b, dtype=np.float64)
    grad_x = np.asarray(grad_x, dtype=np.float64)
    if k < 1:
        raise DimensionMismatch(f"need at least one iteration, got k = {k}")
    if b.shape != (n,) or grad_x.shape != (n,):
        raise DimensionMismatch(f"b {b.shape} and grad_x {grad_x.shape} must both be ({n},)")
    M = M or IdentityPreconditioner(n)
    apply_m = M.apply

    r = b.copy()
    z = apply_m(r)
    p = z.copy()
    rho = r @ z
    rs, zs, ps, rhos = [r], [z], [p], [rho]
    qs, gammas, alphas, betas = [], [], [], []
    if rho == 0:
        return np.zeros(n), np.zeros((n, n))

    for i in range(k):
        q = matvec(p)
        gamma = p @ q
        if not gamma > 0:
            raise BreakdownError(f"p^T A p = {gamma:.3e} at iteration {i}")
        alpha = rho / gamma
        r = r - alpha * q
        qs.append(q)
        gammas.append(gamma)
        alphas.append(alpha)
        if i == k - 1:
            break
        z = apply_m(r)
        rho_next = r @ z
        if rho_next == 0:
            break
        beta = rho_next / rho
        p = z + beta * p
        rs.append(r)
        zs.append(z)
        ps.append(p)
        rhos.append(rho_next)
        betas.append(beta)
        rho = rho_next
    steps = len(alphas)

    x_bar = grad_x
    r_bar = np.zeros(n)
    p_bar = np.zeros(n)
    rho_bar = 0.0
    A_bar = np.zeros((n, n))
    for i in reversed(range(steps)):
        if i < steps - 1:
            # p_{i+1} = z_{i+1} + beta_i p_i, beta_i = rho_{i+1} / rho_i
            beta_bar = p_bar @ ps[i]
            rho_next_bar = rho_bar + beta_bar / rhos[i]
            z_bar = p_bar + rho_next_bar * rs[i + 1]
            r_bar = r_bar + rho_next_bar * zs[i + 1] + apply_m(z_bar)
            p_bar = betas[i] * p_bar
            rho_bar = -beta_bar * rhos[i + 1] / rhos[i] ** 2

        alpha, q, p, gamma = alphas[i], qs[i], ps[i], gammas[i]
        alpha_bar = x_bar @ p - r_bar @ q
        q_bar = -alpha * r_bar
        p_bar = p_bar + alpha * x_bar
        rho_bar = rho_bar + alpha_bar / gamma
        gamma_bar = -alpha_bar * rhos[i] / gamma**2
        p_bar = p_bar + gamma_bar * q
        q_bar = q_bar + gamma_bar * p
        p_bar = p_bar + matvec(q_bar)
        A_bar += np.outer(q_bar, p)

    # p_0 = z_0 = M r_0, rho_0 = r_0 . z_0, r_0 = b
    z_bar = p_bar + rho_bar * rs[0]
    grad_b = r_bar + rho_bar * zs[0] + apply_m(z_bar)
    return grad_b, A_bar


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    x0: np.ndarray,
    analytic_grad: np.ndarray,
    step: float = DEFAULT_STEP,
    floor: float = DEFAULT_FLOOR,
    indices: Optional[Sequence[int]] = None,
) -> FiniteDiffReport:
    """Central differences per coordinate against an analytic gradient.

    Relative error is |a - n| / max(|a|, |n|, floor). ``indices`` restricts
    the probed coordinates; others report a zero numeric gradient.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64).ravel()
    flat = x0.ravel()
    if analytic.shape != flat.shape:
        raise DimensionMismatch(f"gradient {analytic.shape} vs point {flat.shape}")
    probe = np.arange(flat.size) if indices is None else np.asarray(indices)

    numeric = np.zeros_like(flat)
    worst, worst_index = 0.0, -1
    for idx in probe:
        plus, minus = flat.copy(), flat.copy()
        plus[idx] += step
        minus[idx] -= step
        f_plus = f(plus.reshape(x0.shape))
        f_minus = f(minus.reshape(x0.shape))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFinite(f"function is not finite around coordinate {idx}")
        numeric[idx] = (f_plus - f_minus) / (2 * step)
        a, num = analytic[idx], numeric[idx]
        error = abs(a - num) / max(abs(a), abs(num), floor)
        if error > worst or worst_index < 0:
            worst, worst_index = error, int(idx)
    return FiniteDiffReport(float(worst), worst_index, numeric)
