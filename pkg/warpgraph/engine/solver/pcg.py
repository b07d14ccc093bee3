import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from warpgraph.engine.config import is_metrics_enabled
from warpgraph.engine.decorators import task
from warpgraph.engine.errors import BreakdownError, DimensionMismatch, NonFinite
from warpgraph.engine.metrics import SolverInstruments
from warpgraph.engine.solver.block_matrix import LinearOperatorLike, operator_of
from warpgraph.engine.solver.preconditioners import (
    IdentityPreconditioner,
    Preconditioner,
)
from warpgraph.engine.tracing import set_span_attributes
from warpgraph.engine.tracing.attributes import SpanAttributes


@dataclass
class SolveReport:
    """Outcome of one PCG run.

    ``residual_history`` holds ||r_k|| for k = 0..iterations, where r_k is the
    recursively updated residual r_k = r_{k-1} - alpha A p. It equals b - A x_k
    in exact arithmetic only; in floating point the two drift apart once
    ||r_k|| nears machine precision times ||A|| ||x_k||.
    """

    iterations: int = 0
    residual_history: List[float] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    precond_setup_time: float = 0.0
    preconditioner: str = "identity"

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else 0.0

    @property
    def relative_residual(self) -> float:
        if not self.residual_history or self.residual_history[0] == 0:
            return 0.0
        return self.final_residual / self.residual_history[0]


def _record(report: SolveReport):
    set_span_attributes(
        {
            SpanAttributes.PCG_ITERATIONS: report.iterations,
            SpanAttributes.PCG_CONVERGED: report.converged,
            SpanAttributes.PCG_FINAL_RESIDUAL: report.final_residual,
            SpanAttributes.PCG_PRECONDITIONER: report.preconditioner,
        }
    )
    if is_metrics_enabled():
        instruments = SolverInstruments.get()
        attrs = {"preconditioner": report.preconditioner}
        instruments.pcg_iterations.record(report.iterations, attrs)
        instruments.pcg_duration.record(report.wall_time, attrs)


@task(name="pcg_solve")
def pcg_solve(
    A: LinearOperatorLike,
    b: np.ndarray,
    M: Optional[Preconditioner] = None,
    max_iters: int = 100,
    tol: float = 1e-6,
    atol: Optional[float] = None,
) -> Tuple[np.ndarray, SolveReport]:
    """Preconditioned conjugate gradients from x0 = 0.

    Stops once ||r_k|| <= max(tol * ||b||, atol) or after ``max_iters``.
    """
    matvec, n = operator_of(A)
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (n,):
        raise DimensionMismatch(f"right-hand side has shape {b.shape}, matrix is {n}x{n}")
    if not np.all(np.isfinite(b)):
        raise NonFinite("right-hand side contains non-finite values")
    M = M or IdentityPreconditioner(n)
    if M.n != n:
        raise DimensionMismatch(f"preconditioner is {M.n}-dimensional, matrix is {n}")

    start = time.perf_counter()
    threshold = float(max(tol * np.linalg.norm(b), atol or 0.0))
    x = np.zeros(n)
    r = b.copy()
    history = [float(np.linalg.norm(r))]
    report = SolveReport(
        residual_history=history,
        precond_setup_time=M.setup_time,
        preconditioner=M.kind.value,
    )

    if history[0] > threshold:
        z = M.apply(r)
        p = z.copy()
        rz = r @ z
        for _ in range(max_iters):
            q = matvec(p)
            curvature = p @ q
            if not curvature > 0:
                raise BreakdownError(
                    f"p^T A p = {curvature:.3e} at iteration {report.iterations}"
                )
            alpha = rz / curvature
            x += alpha * p
            r -= alpha * q
            report.iterations += 1
            history.append(float(np.linalg.norm(r)))
            if history[-1] <= threshold:
                break
            z = M.apply(r)
            rz_next = r @ z
            if rz_next == 0:
                break
            beta = rz_next / rz
            p = z + beta * p
            rz = rz_next

    report.converged = bool(history[-1] <= threshold)
    report.wall_time = time.perf_counter() - start
    if not report.converged:
        logging.debug(
            f"PCG ({report.preconditioner}) stopped after {report.iterations} "
            f"iterations at residual {history[-1]:.3e}"
        )
    _record(report)
    return x, report
