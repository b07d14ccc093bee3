from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from warpgraph.engine.energy.sampling import bilinear_many
from warpgraph.engine.errors import DimensionMismatch, NoCovisiblePixels
from warpgraph.engine.frames import Frame
from warpgraph.engine.graph import DeformGraph

VISIBILITY_TOLERANCE = 0.02
MIN_COVISIBILITY = 0.5
MAX_PHOTO_ERROR = 0.05
MAX_INVALID_FRACTION = 0.5
MAX_FRAME_DEPTH = 2.0


@dataclass
class EvalReport:
    """``flow_loss`` sums per-node L1 errors; ``flow_loss_mean`` averages them."""

    epe_mean: float
    epe_median: float
    flow_loss: float
    flow_loss_mean: float
    per_node_error: np.ndarray
    n_nodes: int

    def to_json(self) -> dict:
        return {
            "epe_mean": self.epe_mean,
            "epe_median": self.epe_median,
            "flow_loss": self.flow_loss,
            "flow_loss_mean": self.flow_loss_mean,
            "n_nodes": self.n_nodes,
        }


def evaluate(
    result: Union[DeformGraph, np.ndarray],
    gt_flow: np.ndarray,
    mask: Optional[np.ndarray] = None,
) -> EvalReport:
    """End-point error and L1 flow loss over valid nodes."""
    if isinstance(result, DeformGraph):
        trans = result.trans
        if mask is None:
            mask = result.valid
    else:
        trans = np.asarray(result, dtype=np.float64)
    gt_flow = np.asarray(gt_flow, dtype=np.float64)
    if trans.shape != gt_flow.shape or trans.ndim != 2 or trans.shape[1] != 3:
        raise DimensionMismatch(f"estimate {trans.shape} vs ground truth {gt_flow.shape}")
    mask = np.ones(len(trans), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).ravel()
    if mask.shape != (len(trans),):
        raise DimensionMismatch(f"mask has {mask.shape[0]} entries, flow has {len(trans)}")

    diff = trans[mask] - gt_flow[mask]
    epe = np.linalg.norm(diff, axis=-1)
    l1 = np.abs(diff).sum(axis=-1)
    count = int(mask.sum())
    return EvalReport(
        epe_mean=float(epe.mean()) if count else 0.0,
        epe_median=float(np.median(epe)) if count else 0.0,
        flow_loss=float(l1.sum()),
        flow_loss_mean=float(l1.mean()) if count else 0.0,
        per_node_error=epe,
        n_nodes=count,
    )


def pcg_loss(x: np.ndarray, x_gt: np.ndarray) -> float:
    x, x_gt = np.asarray(x, dtype=np.float64), np.asarray(x_gt, dtype=np.float64)
    if x.shape != x_gt.shape:
        raise DimensionMismatch(f"{x.shape} vs {x_gt.shape}")
    return float(np.abs(x - x_gt).sum())


def _target_points(frame: Frame) -> np.ndarray:
    K = frame.intrinsics
    v, u = np.mgrid[0 : frame.height, 0 : frame.width].astype(np.float64)
    z = frame.depth
    return np.stack([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z], axis=-1)


def rigid_flow(frame: Frame, rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    """Per-pixel displacement (H, W, 3) of valid target points under X -> R X + t."""
    rotation = np.asarray(rotation, dtype=np.float64)
    points = _target_points(frame)
    flow = points @ rotation.T + np.asarray(translation, dtype=np.float64) - points
    flow[~frame.valid_depth] = 0.0
    return flow


def densify_node_flow(
    graph: DeformGraph, node_trans: np.ndarray, height: int, width: int
) -> np.ndarray:
    """Bilinear upsampling of per-node translations to an (H, W, 3) field."""
    node_trans = np.asarray(node_trans, dtype=np.float64)
    if node_trans.shape != (graph.n_nodes, 3):
        raise DimensionMismatch(f"node flow {node_trans.shape}, graph has {graph.n_nodes} nodes")
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    grid = graph.lattice.to_grid(np.stack([u, v], axis=-1).reshape(-1, 2))
    grid[:, 0] = np.clip(grid[:, 0], 0, graph.w - 1)
    grid[:, 1] = np.clip(grid[:, 1], 0, graph.h - 1)
    values, _, _ = bilinear_many(node_trans.reshape(graph.h, graph.w, 3), grid)
    return values.reshape(height, width, 3)


def _covisible(source: Frame, target: Frame, flow: np.ndarray, tolerance: float):
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != (target.height, target.width, 3):
        raise DimensionMismatch(
            f"flow is {flow.shape}, expected {(target.height, target.width, 3)}"
        )
    K = source.intrinsics
    moved = _target_points(target) + flow
    z = moved[..., 2]
    valid = target.valid_depth & (z > 0)
    safe = np.where(valid, z, 1.0)
    q = np.stack([K.fx * moved[..., 0] / safe + K.cx, K.fy * moved[..., 1] / safe + K.cy], -1)
    qi = np.round(q).astype(np.int64)
    inside = (qi[..., 0] >= 0) & (qi[..., 0] < source.width) & (qi[..., 1] >= 0) & (qi[..., 1] < source.height)
    valid &= inside
    qu = np.clip(qi[..., 0], 0, source.width - 1)
    qv = np.clip(qi[..., 1], 0, source.height - 1)
    observed = source.depth[qv, qu]
    visible = valid & (observed > 0) & (np.abs(observed - z) <= tolerance)
    return visible, q


def covisibility(
    source: Frame, target: Frame, flow: np.ndarray, tolerance: float = VISIBILITY_TOLERANCE
) -> float:
    """Fraction of valid target pixels that land on matching source surface."""
    denominator = int(target.valid_depth.sum())
    if denominator == 0:
        return 0.0
    visible, _ = _covisible(source, target, flow, tolerance)
    return float(visible.sum()) / denominator


def photo_consistency_error(
    source: Frame, target: Frame, flow: np.ndarray, tolerance: float = VISIBILITY_TOLERANCE
) -> float:
    """Mean |I_S(warped) - I_T| over covisible pixels, intensities in [0, 1]."""
    visible, q = _covisible(source, target, flow, tolerance)
    probes = q[visible]
    probes[:, 0] = np.clip(probes[:, 0], 0, source.width - 1)
    probes[:, 1] = np.clip(probes[:, 1], 0, source.height - 1)
    if len(probes) == 0:
        raise NoCovisiblePixels("no target pixel is visible in the source frame")
    sampled, _, _ = bilinear_many(source.intensity()[:, :, None], probes)
    return float(np.abs(sampled[:, 0] - target.intensity()[visible]).mean())


@dataclass
class FrameFilterResult:
    keep: bool
    invalid_fraction: float
    max_depth: float
    reasons: List[str] = field(default_factory=list)


@dataclass
class PairFilterResult:
    keep: bool
    covisibility: float
    photo_error: float
    reasons: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "keep": self.keep,
            "covisibility": self.covisibility,
            "photo_error": self.photo_error,
            "reasons": self.reasons,
        }


def filter_frame(
    frame: Frame,
    max_invalid_fraction: float = MAX_INVALID_FRACTION,
    max_depth: float = MAX_FRAME_DEPTH,
) -> FrameFilterResult:
    invalid = float(1.0 - frame.valid_depth.mean())
    deepest = float(frame.depth.max(initial=0.0))
    reasons = []
    if invalid > max_invalid_fraction:
        reasons.append(f"{invalid:.1%} of depth is invalid")
    if deepest > max_depth:
        reasons.append(f"depth reaches {deepest:.2f} m")
    return FrameFilterResult(not reasons, invalid, deepest, reasons)


def filter_pair(
    source: Frame,
    target: Frame,
    flow: np.ndarray,
    min_covisibility: float = MIN_COVISIBILITY,
    max_photo_error: float = MAX_PHOTO_ERROR,
) -> PairFilterResult:
    reasons = []
    covis = covisibility(source, target, flow)
    try:
        photo = photo_consistency_error(source, target, flow)
    except NoCovisiblePixels:
        photo = float("inf")
    if covis < min_covisibility:
        reasons.append(f"covisibility {covis:.1%} below {min_covisibility:.0%}")
    if photo > max_photo_error:
        reasons.append(f"photo-consistency error {photo:.3f} above {max_photo_error}")
    return PairFilterResult(not reasons, covis, photo, reasons)
