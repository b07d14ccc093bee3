import logging
import time
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.ndimage import gaussian_filter

from warpgraph.engine.config import is_metrics_enabled
from warpgraph.engine.decorators import task, workflow
from warpgraph.engine.energy import (
    ResidualBlock,
    Weights,
    assemble_system,
    energy_breakdown,
    geometric_residuals,
    arap_residuals,
    residual_blocks,
    total_energy,
)
from warpgraph.engine.errors import (
    ConfigError,
    DescentViolation,
    NoValidNodes,
    NonFinite,
    ResolutionMismatch,
)
from warpgraph.engine.frames import FeatureMap, Frame
from warpgraph.engine.graph import DeformGraph, GridLattice, apply_increment, build_graph
from warpgraph.engine.metrics import SolverInstruments
from warpgraph.engine.solver import SolveReport, dump_system, make_preconditioner, pcg_solve
from warpgraph.engine.tracing import set_span_attributes
from warpgraph.engine.tracing.attributes import SpanAttributes
from warpgraph.engine.tracker.models import FeatureSource, TrackerConfig, TrackingResult

MAX_HALVINGS = 5
# feature low-pass width, in graph cells
FEATURE_BLUR_CELLS = 0.75

EnergyFn = Callable[[DeformGraph], List[ResidualBlock]]


def features_from_intensity(frame: Frame, w: int, h: int) -> FeatureMap:
    """Grayscale intensity low-passed to the graph spacing and sampled at the anchors.

    The blur is normalized over pixels with depth, so holes in the frame do
    not darken the nodes next to them.
    """
    lattice = GridLattice.for_image(frame.width, frame.height, w, h)
    sigma = FEATURE_BLUR_CELLS * np.array([lattice.step_y, lattice.step_x], dtype=np.float64)
    valid = (frame.depth > 0).astype(np.float64)
    if not valid.any():
        valid = np.ones_like(valid)
    weight = gaussian_filter(valid, sigma, mode="nearest")
    blurred = gaussian_filter(frame.intensity() * valid, sigma, mode="nearest")
    smooth = np.divide(blurred, weight, out=np.zeros_like(blurred), where=weight > 1e-9)
    return FeatureMap(lattice.sample_nodes(smooth))


def _node_depth(frame: Frame, w: int, h: int) -> np.ndarray:
    return GridLattice.for_image(frame.width, frame.height, w, h).sample_nodes(frame.depth)


def _record_iteration(k: int, energy_before: float, energy_after: float):
    set_span_attributes(
        {SpanAttributes.GN_ITERATION: k, SpanAttributes.GN_ENERGY: energy_after}
    )
    if is_metrics_enabled() and energy_before > 0:
        SolverInstruments.get().gn_energy_ratio.record(energy_after / energy_before)


@task(name="gauss_newton_step")
def _gauss_newton_step(
    graph: DeformGraph,
    blocks: List[ResidualBlock],
    energy_fn: EnergyFn,
    cfg: TrackerConfig,
    k: int,
    dump_dir: Optional[Path] = None,
    monotone: bool = False,
) -> Tuple[Optional[DeformGraph], List[ResidualBlock], SolveReport, float, Optional[Path]]:
    """One GN update. Returns a None graph when a monotone step had to be rejected."""
    energy = total_energy(blocks)
    A, b = assemble_system(blocks, graph)
    dumped = None
    if dump_dir is not None:
        dumped = Path(dump_dir) / f"{cfg.run_id}_gn{k:02d}.nrab"
        dump_system(A, b, dumped)

    M = make_preconditioner(cfg.preconditioner.kind, A, cfg.preconditioner.factor_path)
    delta, report = pcg_solve(A, b, M, max_iters=cfg.pcg_iters, tol=cfg.pcg_tol)
    decrease = float(b @ delta)
    if decrease < -1e-12 * max(1.0, float(np.linalg.norm(b) * np.linalg.norm(delta))):
        raise DescentViolation(f"b^T delta = {decrease:.3e} at iteration {k}")

    step = 1.0
    for _ in range(MAX_HALVINGS + 1):
        candidate = apply_increment(graph, step * delta)
        new_blocks = energy_fn(candidate)
        new_energy = total_energy(new_blocks)
        acceptable = np.isfinite(new_energy) and (not monotone or new_energy <= energy)
        if acceptable:
            _record_iteration(k, energy, new_energy)
            return candidate, new_blocks, report, step, dumped
        logging.info(f"GN iteration {k}: energy {new_energy:.6g} at step {step:g}, halving")
        step *= 0.5

    if monotone:
        logging.info(f"GN iteration {k}: no decreasing step found, keeping the current graph")
        return None, blocks, report, 0.0, dumped
    raise NonFinite(f"energy stays non-finite after {MAX_HALVINGS} step halvings")


def _run(
    graph: DeformGraph,
    energy_fn: EnergyFn,
    cfg: TrackerConfig,
    iterations: int,
    dump_dir: Optional[Path],
    monotone: bool,
) -> TrackingResult:
    start = time.perf_counter()
    blocks = energy_fn(graph)
    result = TrackingResult(
        graph=graph,
        energy_history=[total_energy(blocks)],
        energy_breakdown=[energy_breakdown(blocks)],
    )
    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)

    for k in range(iterations):
        candidate, blocks, report, step, dumped = _gauss_newton_step(
            result.graph, blocks, energy_fn, cfg, k, dump_dir, monotone
        )
        result.solve_reports.append(report)
        if dumped is not None:
            result.dumped_systems.append(dumped)
        if candidate is None:
            break
        result.graph = candidate
        result.step_sizes.append(step)
        result.energy_history.append(total_energy(blocks))
        result.energy_breakdown.append(energy_breakdown(blocks))

    result.wall_time = time.perf_counter() - start
    return result


@workflow(name="track")
def track(
    source: Frame,
    target: Frame,
    features: Optional[Tuple[FeatureMap, FeatureMap]] = None,
    cfg: Optional[TrackerConfig] = None,
    initial_graph: Optional[DeformGraph] = None,
    dump_dir: Optional[Union[str, Path]] = None,
) -> TrackingResult:
    """Gauss-Newton tracking of the target graph onto the source frame."""
    cfg = cfg or TrackerConfig()
    graph = initial_graph if initial_graph is not None else build_graph(target, cfg.graph)
    if not graph.valid.any():
        raise NoValidNodes("the target frame yields no valid graph nodes")

    if features is None:
        if cfg.feature_source is FeatureSource.LOADED_NRFM:
            raise ConfigError("feature_source is loaded_nrfm but no feature maps were given")
        F_S = features_from_intensity(source, graph.w, graph.h)
        F_T = features_from_intensity(target, graph.w, graph.h)
    else:
        F_S, F_T = features
        for name, fmap in (("source", F_S), ("target", F_T)):
            if (fmap.h, fmap.w) != (graph.h, graph.w):
                raise ResolutionMismatch(
                    f"{name} features are {fmap.h}x{fmap.w}, graph is {graph.h}x{graph.w}"
                )

    D_S = _node_depth(source, graph.w, graph.h)
    D_T = _node_depth(target, graph.w, graph.h)
    K_src, K_tgt = source.intrinsics, target.intrinsics

    def energy_fn(g: DeformGraph) -> List[ResidualBlock]:
        return residual_blocks(g, F_S, F_T, D_S, D_T, K_src, K_tgt, cfg.weights)

    if dump_dir is None and cfg.dump_systems:
        raise ConfigError("dump_systems is set but no dump directory was given")
    return _run(graph, energy_fn, cfg, cfg.gn_iters, dump_dir, monotone=False)


@workflow(name="refine_with_depth")
def refine_with_depth(
    result: Union[TrackingResult, DeformGraph],
    source: Frame,
    target: Frame,
    cfg: Optional[TrackerConfig] = None,
) -> TrackingResult:
    """More GN rounds on depth and rigidity only, sampling full-resolution source depth.

    A step that increases the energy is halved, and rejected (ending the
    refinement) when no halving helps.
    """
    cfg = cfg or TrackerConfig()
    graph = result.graph if isinstance(result, TrackingResult) else result
    try:
        weights = Weights(lambda_f=0.0, lambda_g=cfg.weights.lambda_g, lambda_r=cfg.weights.lambda_r)
    except ValidationError as e:
        raise ConfigError(f"refinement needs lambda_g or lambda_r above zero: {e}") from e
    D_T = _node_depth(target, graph.w, graph.h)
    K_src, K_tgt = source.intrinsics, target.intrinsics

    def energy_fn(g: DeformGraph) -> List[ResidualBlock]:
        blocks = [geometric_residuals(g, source.depth, D_T, K_src, K_tgt, weights)]
        if weights.lambda_r > 0:
            blocks.append(arap_residuals(g, weights))
        return blocks

    return _run(graph, energy_fn, cfg, cfg.refine_iters, None, monotone=True)
