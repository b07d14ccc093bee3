from warpgraph.engine.adjoint.gradients import (
    FiniteDiffReport,
    SolveGradients,
    finite_diff_check,
    solve_adjoint,
    unrolled_pcg_grad,
)
from warpgraph.engine.adjoint.suite import (
    ADJOINT_THRESHOLD,
    JACOBIAN_THRESHOLD,
    UNROLLED_THRESHOLD,
    ComponentResult,
    run_grad_check,
)
