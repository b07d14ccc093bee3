import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from warpgraph.engine.decorators import task
from warpgraph.engine.errors import NotSPD
from warpgraph.engine.solver.block_matrix import LinearOperatorLike, operator_of
from warpgraph.engine.solver.preconditioners import Preconditioner
from warpgraph.engine.tracing import set_span_attributes
from warpgraph.engine.tracing.attributes import SpanAttributes

MAX_STEPS = 200
RITZ_RTOL = 1e-6
INVARIANT_TOL = 1e-10


@dataclass
class ConditionEstimate:
    kappa: float
    lambda_min: float
    lambda_max: float
    steps: int
    converged: bool


def _ritz_extremes(alphas, betas):
    if len(alphas) == 1:
        return alphas[0], alphas[0]
    values = eigvalsh_tridiagonal(np.asarray(alphas), np.asarray(betas))
    return values[0], values[-1]


def lanczos_extremes(
    apply_op: Callable[[np.ndarray, np.ndarray], np.ndarray],
    n: int,
    apply_inner: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    max_steps: int = MAX_STEPS,
    rtol: float = RITZ_RTOL,
    seed: int = 0,
) -> ConditionEstimate:
    """Extreme Ritz values of an operator self-adjoint in <x, y> = x^T B y.

    ``apply_op(v, Bv)`` returns K v; ``apply_inner`` applies B (identity when
    omitted). Uses full re-orthogonalization and stops once both extremes
    change by less than ``rtol`` relative on two consecutive steps, or when
    the Krylov space becomes invariant.
    """
    inner = apply_inner or (lambda v: v)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    bv = inner(v)
    norm2 = v @ bv
    if not norm2 > 0:
        raise NotSPD("inner-product matrix is not positive definite")
    scale = np.sqrt(norm2)
    basis, inner_basis = [v / scale], [bv / scale]
    alphas, betas = [], []
    previous, stable_steps = None, 0
    lam_min = lam_max = 0.0
    converged = False

    for step in range(1, min(max_steps, n) + 1):
        w = apply_op(basis[-1], inner_basis[-1])
        V, BV = np.array(basis), np.array(inner_basis)
        coeffs = BV @ w
        alphas.append(coeffs[-1])
        w = w - V.T @ coeffs
        w = w - V.T @ (BV @ w)

        lam_min, lam_max = _ritz_extremes(alphas, betas)
        if previous is not None:
            drift = max(
                abs(lam_min - previous[0]) / max(abs(lam_min), 1e-300),
                abs(lam_max - previous[1]) / max(abs(lam_max), 1e-300),
            )
            stable_steps = stable_steps + 1 if drift < rtol else 0
            if stable_steps >= 2:
                converged = True
                break
        previous = (lam_min, lam_max)

        bw = inner(w)
        beta2 = w @ bw
        if not beta2 > (INVARIANT_TOL * max(abs(lam_max), 1.0)) ** 2 or step == n:
            converged = True
            break
        beta = np.sqrt(beta2)
        basis.append(w / beta)
        inner_basis.append(bw / beta)
        betas.append(beta)

    kappa = lam_max / lam_min if lam_min > 0 else float("inf")
    return ConditionEstimate(float(kappa), float(lam_min), float(lam_max), len(alphas), converged)


@task(name="condition_number")
def condition_number(
    A: LinearOperatorLike,
    M: Optional[Preconditioner] = None,
    max_steps: int = MAX_STEPS,
    rtol: float = RITZ_RTOL,
    seed: int = 0,
) -> ConditionEstimate:
    """kappa(M^-1 A) by Lanczos on M^-1 A in the A inner product."""
    matvec, n = operator_of(A)
    if M is None:
        estimate = lanczos_extremes(
            lambda v, bv: matvec(v), n, max_steps=max_steps, rtol=rtol, seed=seed
        )
    else:
        estimate = lanczos_extremes(
            lambda v, av: M.apply(av),
            n,
            apply_inner=matvec,
            max_steps=max_steps,
            rtol=rtol,
            seed=seed,
        )
    if not estimate.converged:
        logging.warning(
            f"Lanczos did not settle in {estimate.steps} steps; kappa ~ {estimate.kappa:.4g}"
        )
    set_span_attributes({SpanAttributes.CONDITION_KAPPA: estimate.kappa})
    return estimate
