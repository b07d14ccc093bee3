"""Finite-difference checks of every analytic derivative in the package."""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from warpgraph.engine.adjoint.gradients import (
    DEFAULT_FLOOR,
    finite_diff_check,
    solve_adjoint,
    unrolled_pcg_grad,
)
from warpgraph.engine.decorators import workflow
from warpgraph.engine.energy import (
    Weights,
    arap_residuals,
    bilinear_many,
    feature_residuals,
    geometric_residuals,
)
from warpgraph.engine.errors import NonFinite
from warpgraph.engine.graph import DOF_PER_NODE, DeformGraph, GridLattice, apply_increment
from warpgraph.engine.solver import BlockJacobiPreconditioner, dense_direct_solve, pcg_solve
from warpgraph.engine.synth import SceneConfig, generate_scene
from warpgraph.engine.tracker.gauss_newton import features_from_intensity

JACOBIAN_THRESHOLD = 1e-5
ADJOINT_THRESHOLD = 1e-6
UNROLLED_THRESHOLD = 1e-5
UNROLLED_STEPS = (1, 3, 5, 10)
ADJOINT_SYSTEMS = 20
KINK_MARGIN = 1e-3


@dataclass
class ComponentResult:
    name: str
    worst_rel_error: float
    threshold: float
    probes: int

    @property
    def passed(self) -> bool:
        return self.probes > 0 and self.worst_rel_error < self.threshold

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "worst_rel_error": self.worst_rel_error,
            "threshold": self.threshold,
            "probes": self.probes,
            "passed": self.passed,
        }


def _near_line(coords: np.ndarray) -> bool:
    frac = coords - np.round(coords)
    return bool(np.any(np.abs(frac) < KINK_MARGIN))


def _random_spd(rng: np.random.Generator, n: int, spread: float = 1.0) -> np.ndarray:
    G = rng.standard_normal((n, n))
    return spread * G @ G.T / n + np.eye(n)


def check_bilinear(
    rng: np.random.Generator, probes: int, floor: float = DEFAULT_FLOOR
) -> ComponentResult:
    grid = rng.uniform(-1, 1, (7, 9, 3))
    weights = rng.standard_normal(3)
    worst, done = 0.0, 0
    while done < probes:
        uv = rng.uniform([0, 0], [8, 6])
        if _near_line(uv):
            continue

        def f(point):
            return float(bilinear_many(grid, point[None, :])[0][0] @ weights)

        _, jac, _ = bilinear_many(grid, uv[None, :])
        report = finite_diff_check(f, uv, weights @ jac[0], floor=floor)
        worst = max(worst, report.max_rel_error)
        done += 1
    return ComponentResult("bilinear", worst, JACOBIAN_THRESHOLD, done)


class _SceneProbe:
    """Translation-Jacobian probes of a per-node warped term on a synthetic pair."""

    def __init__(
        self,
        rng: np.random.Generator,
        term: Callable[[DeformGraph], object],
        floor: float = DEFAULT_FLOOR,
    ):
        self.rng = rng
        self.term = term
        self.floor = floor

    def run(self, name: str, graphs: List[DeformGraph], grid_of: Callable, probes: int):
        worst, done, attempts = 0.0, 0, 0
        while done < probes and attempts < 50 * probes:
            attempts += 1
            g = graphs[self.rng.integers(len(graphs))]
            block = self.term(g)
            nodes = np.unique(block.row_nodes[:, 0])
            if len(nodes) == 0:
                break
            node = int(nodes[self.rng.integers(len(nodes))])
            if _near_line(grid_of(g, node)):
                continue
            rows = block.row_nodes[:, 0] == node
            weights = self.rng.standard_normal(int(rows.sum()))
            slots = DOF_PER_NODE * node + 3 + np.arange(3)
            analytic = weights @ block.jacobian[rows][:, slots].toarray()

            def f(t, g=g, node=node, rows_expected=int(rows.sum()), weights=weights):
                trans = np.array(g.trans)
                trans[node] = t
                moved = self.term(g.with_state(trans=trans))
                mine = moved.row_nodes[:, 0] == node
                if int(mine.sum()) != rows_expected:
                    return float("nan")
                return float(weights @ moved.residuals[mine])

            try:
                report = finite_diff_check(f, np.array(g.trans[node]), analytic, floor=self.floor)
            except NonFinite:
                continue
            worst = max(worst, report.max_rel_error)
            done += 1
        return ComponentResult(name, worst, JACOBIAN_THRESHOLD, done)


def check_energy_terms(
    rng: np.random.Generator, probes: int, seed: int = 0, floor: float = DEFAULT_FLOOR
) -> List[ComponentResult]:
    scene = generate_scene(seed, SceneConfig(width=160, height=120))
    source, target = scene.source, scene.target
    K_src, K_tgt = source.intrinsics, target.intrinsics
    base = scene.gt_graph
    graphs = [base.with_state(trans=scale * scene.gt_flow) for scale in (0.3, 0.7)]
    lattice = GridLattice.for_image(K_src.width, K_src.height, base.w, base.h)
    D_S = lattice.sample_nodes(source.depth)
    D_T = base.lattice.sample_nodes(target.depth)
    F_S = features_from_intensity(source, base.w, base.h)
    F_T = features_from_intensity(target, base.w, base.h)
    weights = Weights()

    def warped_pixel(g: DeformGraph, node: int) -> np.ndarray:
        z = D_T.ravel()[node]
        pixel = g.node_pixel[node]
        point = np.array(
            [(pixel[0] - K_tgt.cx) * z / K_tgt.fx, (pixel[1] - K_tgt.cy) * z / K_tgt.fy, z]
        ) + g.trans[node]
        return np.array(
            [K_src.fx * point[0] / point[2] + K_src.cx, K_src.fy * point[1] / point[2] + K_src.cy]
        )

    def node_grid(g, node):
        return lattice.to_grid(warped_pixel(g, node))

    feature = _SceneProbe(
        rng, lambda g: feature_residuals(g, F_S, F_T, D_T, K_src, K_tgt, weights), floor
    ).run("feature", graphs, node_grid, probes)
    coarse = _SceneProbe(
        rng, lambda g: geometric_residuals(g, D_S, D_T, K_src, K_tgt, weights), floor
    ).run("geometric", graphs, node_grid, probes - probes // 2)
    fine = _SceneProbe(
        rng, lambda g: geometric_residuals(g, source.depth, D_T, K_src, K_tgt, weights), floor
    ).run("geometric", graphs, warped_pixel, probes // 2)
    geometric = ComponentResult(
        "geometric",
        max(coarse.worst_rel_error, fine.worst_rel_error),
        JACOBIAN_THRESHOLD,
        coarse.probes + fine.probes,
    )

    arap_graph = _with_random_rotations(graphs[1], rng)
    block = arap_residuals(arap_graph, weights)
    candidates = np.unique(block.row_nodes[:, 0])
    worst, done = 0.0, 0
    for _ in range(probes):
        node = int(candidates[rng.integers(len(candidates))])
        w = rng.standard_normal(block.n_rows)
        slots = DOF_PER_NODE * node + np.arange(DOF_PER_NODE)
        analytic = block.jacobian.T @ w

        def f(x6, node=node, w=w):
            delta = np.zeros(arap_graph.state_dim)
            delta[DOF_PER_NODE * node : DOF_PER_NODE * (node + 1)] = x6
            return float(w @ arap_residuals(apply_increment(arap_graph, delta), weights).residuals)

        report = finite_diff_check(f, np.zeros(DOF_PER_NODE), analytic[slots], floor=floor)
        worst = max(worst, report.max_rel_error)
        done += 1
    arap = ComponentResult("arap", worst, JACOBIAN_THRESHOLD, done)
    return [feature, geometric, arap]


def _with_random_rotations(g: DeformGraph, rng: np.random.Generator) -> DeformGraph:
    """Graph with small random node rotations so rotation Jacobians are non-trivial."""
    delta = np.zeros((g.n_nodes, DOF_PER_NODE))
    delta[:, :3] = 0.05 * rng.standard_normal((g.n_nodes, 3))
    return apply_increment(g, delta.ravel())


def check_solve_adjoint(
    rng: np.random.Generator, systems: int = ADJOINT_SYSTEMS, floor: float = DEFAULT_FLOOR
) -> ComponentResult:
    worst, done = 0.0, 0
    for _ in range(systems):
        n = int(rng.integers(6, 61))
        A = _random_spd(rng, n)
        b = rng.standard_normal(n)
        c = rng.standard_normal(n)
        x = dense_direct_solve(A, b)
        grads = solve_adjoint(A, x, c, tol=1e-13)

        report = finite_diff_check(
            lambda bb: float(c @ dense_direct_solve(A, bb)), b, grads.grad_b, floor=floor
        )
        worst = max(worst, report.max_rel_error)

        rows, cols = np.tril_indices(n)
        pick = rng.choice(len(rows), size=min(30, len(rows)), replace=False)
        rows, cols = rows[pick], cols[pick]
        dense_grad = grads.grad_A.toarray()

        def f(theta):
            perturbed = A.copy()
            perturbed[rows, cols] += theta
            off = rows != cols
            perturbed[cols[off], rows[off]] += theta[off]
            return float(c @ dense_direct_solve(perturbed, b))

        report = finite_diff_check(f, np.zeros(len(rows)), dense_grad[rows, cols], floor=floor)
        worst = max(worst, report.max_rel_error)
        done += 1
    return ComponentResult("solve_adjoint", worst, ADJOINT_THRESHOLD, done)


def check_unrolled(
    rng: np.random.Generator, steps=UNROLLED_STEPS, systems: int = 3, floor: float = DEFAULT_FLOOR
) -> List[ComponentResult]:
    results = []
    for k in steps:
        worst, done = 0.0, 0
        for _ in range(systems):
            n = 20
            A = _random_spd(rng, n, spread=20.0)
            b = rng.standard_normal(n)
            c = rng.standard_normal(n)
            M = BlockJacobiPreconditioner(np.sqrt(np.diag(A)).reshape(n, 1, 1))
            grad_b, grad_A = unrolled_pcg_grad(A, b, M, k, c)

            def run(AA, bb):
                x, _ = pcg_solve(AA, bb, M, max_iters=k, tol=0.0)
                return float(c @ x)

            report = finite_diff_check(lambda bb: run(A, bb), b, grad_b, floor=floor)
            worst = max(worst, report.max_rel_error)
            entries = rng.choice(n * n, size=30, replace=False)

            def f(theta):
                perturbed = A.copy().ravel()
                perturbed[entries] += theta
                return run(perturbed.reshape(n, n), b)

            report = finite_diff_check(
                f, np.zeros(len(entries)), grad_A.ravel()[entries], floor=floor
            )
            worst = max(worst, report.max_rel_error)
            done += 1
        results.append(ComponentResult(f"unrolled_pcg_k{k}", worst, UNROLLED_THRESHOLD, done))
    return results


@workflow(name="grad_check")
def run_grad_check(
    probes: int = 200,
    seed: int = 0,
    scene_seed: Optional[int] = None,
    floor: float = DEFAULT_FLOOR,
) -> List[ComponentResult]:
    """Runs every component check; ``floor`` bounds the relative-error denominator."""
    rng = np.random.default_rng(seed)
    results = [check_bilinear(rng, probes, floor)]
    results += check_energy_terms(rng, probes, seed if scene_seed is None else scene_seed, floor)
    results.append(check_solve_adjoint(rng, floor=floor))
    results += check_unrolled(rng, floor=floor)
    for result in results:
        level = logging.INFO if result.passed else logging.WARNING
        logging.log(level, f"{result.name}: worst relative error {result.worst_rel_error:.3e}")
    return results
