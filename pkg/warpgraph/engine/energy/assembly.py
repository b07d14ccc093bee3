import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator

from warpgraph.engine.errors import DimensionMismatch
from warpgraph.engine.graph import DOF_PER_NODE, DeformGraph
from warpgraph.engine.solver.block_matrix import BlockSparseMatrix


class Weights(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda_f: float = Field(default=1.0, ge=0)
    lambda_g: float = Field(default=0.5, ge=0)
    lambda_r: float = Field(default=40.0, ge=0)

    @model_validator(mode="after")
    def _not_all_zero(self) -> "Weights":
        if self.lambda_f == 0 and self.lambda_g == 0 and self.lambda_r == 0:
            raise ValueError("at least one energy weight must be positive")
        return self


class ResidualTerm(str, Enum):
    FEATURE = "feature"
    GEOMETRIC = "geometric"
    ARAP = "arap"


@dataclass(frozen=True, eq=False)
class ResidualBlock:
    """Weighted residuals r and their sparse Jacobian J (rows x state slots).

    ``row_nodes`` holds, per row, the node indices the row touches (-1 padding).
    """

    term: ResidualTerm
    residuals: np.ndarray
    jacobian: sp.csr_matrix
    row_nodes: np.ndarray

    def __post_init__(self):
        m = self.residuals.shape[0]
        if self.jacobian.shape[0] != m or self.row_nodes.shape[0] != m:
            raise DimensionMismatch(
                f"{self.term.value}: {m} residuals, jacobian {self.jacobian.shape}, "
                f"row_nodes {self.row_nodes.shape}"
            )

    @property
    def n_rows(self) -> int:
        return self.residuals.shape[0]

    @property
    def energy(self) -> float:
        return float(self.residuals @ self.residuals)

    @classmethod
    def empty(cls, term: ResidualTerm, state_dim: int) -> "ResidualBlock":
        return cls(
            term=term,
            residuals=np.zeros(0),
            jacobian=sp.csr_matrix((0, state_dim)),
            row_nodes=np.zeros((0, 2), dtype=np.int64),
        )

    def to_json(self) -> dict:
        return {"term": self.term.value, "rows": self.n_rows, "energy": self.energy}


def total_energy(blocks: Sequence[ResidualBlock]) -> float:
    """Sum of squared (already weighted) residuals."""
    return float(sum(block.energy for block in blocks))


def energy_breakdown(blocks: Sequence[ResidualBlock]) -> Dict[str, float]:
    breakdown = {term.value: 0.0 for term in ResidualTerm}
    for block in blocks:
        breakdown[block.term.value] += block.energy
    return breakdown


def assemble_system(
    blocks: Sequence[ResidualBlock],
    graph: Optional[DeformGraph] = None,
    state_dim: Optional[int] = None,
) -> Tuple[BlockSparseMatrix, np.ndarray]:
    """Normal equations A = J^T J, b = -J^T r.

    DOFs of invalid nodes, and any DOF no residual touches, get a unit diagonal
    and a zero right-hand side.
    """
    if graph is not None:
        state_dim = graph.state_dim
    elif state_dim is None:
        if not blocks:
            raise DimensionMismatch("cannot infer the state size without blocks")
        state_dim = blocks[0].jacobian.shape[1]

    for block in blocks:
        if block.jacobian.shape[1] != state_dim:
            raise DimensionMismatch(
                f"{block.term.value} jacobian has {block.jacobian.shape[1]} columns, "
                f"state has {state_dim}"
            )

    if blocks:
        jac = sp.vstack([block.jacobian for block in blocks], format="csr")
        res = np.concatenate([block.residuals for block in blocks])
    else:
        jac = sp.csr_matrix((0, state_dim))
        res = np.zeros(0)

    gram = (jac.T @ jac).tocsr()
    rhs = -(jac.T @ res)

    frozen = gram.diagonal() == 0
    if graph is not None:
        frozen |= np.repeat(~graph.valid, DOF_PER_NODE)
    uncovered = int(frozen.sum())
    if graph is not None:
        uncovered -= DOF_PER_NODE * int((~graph.valid).sum())
    if uncovered > 0:
        logging.debug(f"Freezing {uncovered} DOFs of valid nodes with no residual rows")

    gram = gram + sp.diags(frozen.astype(np.float64))
    rhs = np.where(frozen, 0.0, rhs)
    return BlockSparseMatrix.from_scipy(gram, block_dim=DOF_PER_NODE), rhs
