from warpgraph.engine.solver.block_matrix import (
    BlockSparseMatrix,
    as_block_matrix,
    as_dense,
    operator_of,
)
from warpgraph.engine.solver.direct import dense_direct_solve, exact_inverse_factor
from warpgraph.engine.solver.pcg import SolveReport, pcg_solve
from warpgraph.engine.solver.preconditioners import (
    BlockJacobiPreconditioner,
    FactorKind,
    IdentityPreconditioner,
    IncompleteCholeskyPreconditioner,
    LoadedFactorPreconditioner,
    Preconditioner,
    PreconditionerKind,
    block_jacobi,
    from_factor,
    identity,
    incomplete_cholesky,
    load_preconditioner,
    make_preconditioner,
    save_preconditioner,
)
from warpgraph.engine.solver.spectrum import (
    ConditionEstimate,
    condition_number,
    lanczos_extremes,
)
from warpgraph.engine.solver.system_io import dump_system, load_system
