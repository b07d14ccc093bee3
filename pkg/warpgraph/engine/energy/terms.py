"""Residuals and Jacobians of the feature, depth and as-rigid-as-possible terms.

Residuals are weighted by sqrt(lambda) so that the energy of a block is the
plain sum of its squared residuals. Warped rows whose probe leaves the grid,
lands on an invalid corner or falls behind the camera are dropped.
"""

import logging
from typing import Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from warpgraph.engine.energy.assembly import ResidualBlock, ResidualTerm, Weights
from warpgraph.engine.energy.sampling import bilinear_many
from warpgraph.engine.errors import ResolutionMismatch
from warpgraph.engine.frames.camera import Intrinsics
from warpgraph.engine.frames.models import FeatureMap
from warpgraph.engine.graph import DOF_PER_NODE, DeformGraph, GridLattice, skew


def _check_node_grid(g: DeformGraph, name: str, grid: np.ndarray):
    if grid.shape[:2] != (g.h, g.w):
        raise ResolutionMismatch(
            f"{name} is {grid.shape[:2]}, graph is {(g.h, g.w)}"
        )


def _warped_nodes(
    g: DeformGraph, D_T: np.ndarray, K_tgt: Intrinsics
) -> Tuple[np.ndarray, np.ndarray]:
    """Valid nodes with positive depth, and their translated 3D points."""
    depth = np.asarray(D_T, dtype=np.float64).ravel()
    nodes = np.flatnonzero(g.valid & (depth > 0))
    pixels = g.node_pixel[nodes].astype(np.float64)
    z = depth[nodes]
    points = np.stack(
        [(pixels[:, 0] - K_tgt.cx) * z / K_tgt.fx, (pixels[:, 1] - K_tgt.cy) * z / K_tgt.fy, z],
        axis=-1,
    )
    return nodes, points + g.trans[nodes]


def _project_front(points: np.ndarray, K: Intrinsics) -> Tuple[np.ndarray, np.ndarray]:
    z = points[:, 2]
    front = z > 0
    safe_z = np.where(front, z, 1.0)
    pixels = np.stack(
        [K.fx * points[:, 0] / safe_z + K.cx, K.fy * points[:, 1] / safe_z + K.cy],
        axis=-1,
    )
    return pixels, front


def _translation_jacobian(
    nodes: np.ndarray, jac: np.ndarray, state_dim: int
) -> sp.csr_matrix:
    """Rows (m, k, 3) of d(residual)/d(t_node) placed at the node's translation slots."""
    m, k = jac.shape[:2]
    rows = np.repeat(np.arange(m * k), 3)
    cols = (DOF_PER_NODE * nodes[:, None, None] + 3 + np.arange(3)[None, None, :])
    cols = np.broadcast_to(cols, (m, k, 3)).ravel()
    return sp.csr_matrix((jac.ravel(), (rows, cols)), shape=(m * k, state_dim))


def _row_nodes(nodes: np.ndarray, repeat: int) -> np.ndarray:
    out = np.full((len(nodes) * repeat, 2), -1, dtype=np.int64)
    out[:, 0] = np.repeat(nodes, repeat)
    return out


def _log_dropped(term: str, candidates: int, kept: int):
    if kept < candidates:
        logging.debug(f"{term}: dropped {candidates - kept} of {candidates} warped nodes")


def feature_residuals(
    g: DeformGraph,
    F_S: Union[FeatureMap, np.ndarray],
    F_T: Union[FeatureMap, np.ndarray],
    D_T: np.ndarray,
    K_src: Intrinsics,
    K_tgt: Optional[Intrinsics] = None,
    weights: Optional[Weights] = None,
) -> ResidualBlock:
    K_tgt = K_tgt or K_src
    weights = weights or Weights()
    src = F_S.data if isinstance(F_S, FeatureMap) else np.asarray(F_S)
    tgt = F_T.data if isinstance(F_T, FeatureMap) else np.asarray(F_T)
    src = np.asarray(src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    if src.ndim == 2:
        src = src[:, :, None]
    if tgt.ndim == 2:
        tgt = tgt[:, :, None]
    _check_node_grid(g, "source features", src)
    _check_node_grid(g, "target features", tgt)
    _check_node_grid(g, "target depth", np.asarray(D_T))
    if src.shape[2] != tgt.shape[2]:
        raise ResolutionMismatch(
            f"feature channels differ: {src.shape[2]} vs {tgt.shape[2]}"
        )

    nodes, points = _warped_nodes(g, D_T, K_tgt)
    pixels, front = _project_front(points, K_src)
    lattice = GridLattice.for_image(K_src.width, K_src.height, g.w, g.h)
    values, dvalue_dgrid, ok = bilinear_many(src, lattice.to_grid(pixels))
    ok &= front
    _log_dropped("feature", len(nodes), int(ok.sum()))

    nodes, points = nodes[ok], points[ok]
    sqrt_w = np.sqrt(weights.lambda_f)
    c = src.shape[2]
    residuals = sqrt_w * (values[ok] - tgt.reshape(-1, c)[nodes])
    dgrid_dpoint = lattice.scale[:, None] * K_src.projection_jacobian(points)
    jac = sqrt_w * dvalue_dgrid[ok] @ dgrid_dpoint
    return ResidualBlock(
        term=ResidualTerm.FEATURE,
        residuals=residuals.ravel(),
        jacobian=_translation_jacobian(nodes, jac, g.state_dim),
        row_nodes=_row_nodes(nodes, c),
    )


def geometric_residuals(
    g: DeformGraph,
    D_S: np.ndarray,
    D_T: np.ndarray,
    K_src: Intrinsics,
    K_tgt: Optional[Intrinsics] = None,
    weights: Optional[Weights] = None,
    source_valid: Optional[np.ndarray] = None,
) -> ResidualBlock:
    """Sampled source depth minus the z of the translated target point.

    ``D_S`` may be node-resolution (h, w), sampled in grid coordinates, or the
    full (H, W) source depth image, sampled in pixel coordinates.
    """
    K_tgt = K_tgt or K_src
    weights = weights or Weights()
    D_S = np.asarray(D_S, dtype=np.float64)
    _check_node_grid(g, "target depth", np.asarray(D_T))

    if D_S.shape == (g.h, g.w):
        lattice = GridLattice.for_image(K_src.width, K_src.height, g.w, g.h)
        to_grid, scale = lattice.to_grid, lattice.scale
    elif D_S.shape == (K_src.height, K_src.width):
        to_grid, scale = (lambda px: px), np.ones(2)
    else:
        raise ResolutionMismatch(
            f"source depth is {D_S.shape}, expected {(g.h, g.w)} or "
            f"{(K_src.height, K_src.width)}"
        )
    valid = D_S > 0 if source_valid is None else np.asarray(source_valid, dtype=bool)

    nodes, points = _warped_nodes(g, D_T, K_tgt)
    pixels, front = _project_front(points, K_src)
    values, dvalue_dgrid, ok = bilinear_many(D_S[:, :, None], to_grid(pixels), valid)
    ok &= front
    _log_dropped("geometric", len(nodes), int(ok.sum()))

    nodes, points = nodes[ok], points[ok]
    sqrt_w = np.sqrt(weights.lambda_g)
    residuals = sqrt_w * (values[ok, 0] - points[:, 2])
    dgrid_dpoint = scale[:, None] * K_src.projection_jacobian(points)
    jac = dvalue_dgrid[ok] @ dgrid_dpoint
    jac[:, 0, 2] -= 1.0
    return ResidualBlock(
        term=ResidualTerm.GEOMETRIC,
        residuals=residuals,
        jacobian=_translation_jacobian(nodes, sqrt_w * jac, g.state_dim),
        row_nodes=_row_nodes(nodes, 1),
    )


def arap_residuals(g: DeformGraph, weights: Optional[Weights] = None) -> ResidualBlock:
    """Per directed edge (i, j): R_i (p_j - p_i) - ((p_j + t_j) - (p_i + t_i))."""
    weights = weights or Weights()
    i, j = g.edges()
    if len(i) == 0:
        return ResidualBlock.empty(ResidualTerm.ARAP, g.state_dim)

    sqrt_w = np.sqrt(weights.lambda_r)
    rotated = np.einsum("eab,eb->ea", g.rot[i], g.node_pos[j] - g.node_pos[i])
    deformed = g.deformed_pos[j] - g.deformed_pos[i]
    residuals = sqrt_w * (rotated - deformed)

    m = len(i)
    rows = np.arange(3 * m).reshape(m, 3)
    axis = np.arange(3)
    # rotation increment: d(exp(w) R d)/dw at 0 is -[R d]x
    rot_jac = -sqrt_w * skew(rotated)
    rot_rows = np.repeat(rows, 3, axis=1).ravel()
    rot_cols = (DOF_PER_NODE * i[:, None, None] + axis[None, None, :]).repeat(3, axis=1)
    trans_rows = np.concatenate([rows.ravel(), rows.ravel()])
    trans_cols = np.concatenate(
        [
            (DOF_PER_NODE * i[:, None] + 3 + axis[None, :]).ravel(),
            (DOF_PER_NODE * j[:, None] + 3 + axis[None, :]).ravel(),
        ]
    )
    trans_vals = np.concatenate([np.full(3 * m, sqrt_w), np.full(3 * m, -sqrt_w)])

    jacobian = sp.coo_matrix(
        (
            np.concatenate([rot_jac.ravel(), trans_vals]),
            (
                np.concatenate([rot_rows, trans_rows]),
                np.concatenate([rot_cols.ravel(), trans_cols]),
            ),
        ),
        shape=(3 * m, g.state_dim),
    ).tocsr()
    row_nodes = np.repeat(np.stack([i, j], axis=-1), 3, axis=0)
    return ResidualBlock(
        term=ResidualTerm.ARAP,
        residuals=residuals.ravel(),
        jacobian=jacobian,
        row_nodes=row_nodes,
    )


def residual_blocks(
    g: DeformGraph,
    F_S,
    F_T,
    D_S: np.ndarray,
    D_T: np.ndarray,
    K_src: Intrinsics,
    K_tgt: Optional[Intrinsics] = None,
    weights: Optional[Weights] = None,
):
    """All terms with a positive weight, in feature, geometric, arap order."""
    weights = weights or Weights()
    blocks = []
    if weights.lambda_f > 0:
        blocks.append(feature_residuals(g, F_S, F_T, D_T, K_src, K_tgt, weights))
    if weights.lambda_g > 0:
        blocks.append(geometric_residuals(g, D_S, D_T, K_src, K_tgt, weights))
    if weights.lambda_r > 0:
        blocks.append(arap_residuals(g, weights))
    return blocks
