"""Synthetic deforming RGB-D pairs with exact per-node ground-truth motion.

The target is a textured height field seen by a pinhole camera. A smooth
deformation (a small rigid motion about the surface centroid plus a sinusoidal
non-rigid part) moves every surface point; the source frame is rendered by
inverting that warp per source pixel, so the texture travels with the surface.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from scipy.ndimage import distance_transform_edt

from warpgraph.engine.decorators import task
from warpgraph.engine.errors import ConfigError, DegenerateScene, FormatError, IoError
from warpgraph.engine.frames import Frame, Intrinsics, load_frame_dir, save_frame_dir
from warpgraph.engine.graph import DeformGraph, GraphConfig, build_graph, fit_local_rotations
from warpgraph.engine.graph.rotations import so3_exp
from warpgraph.engine.synth.metrics import densify_node_flow

NEWTON_ITERS = 30
NEWTON_TOL = 1e-7
INVERSE_TOL = 1e-6
SPLAT_RADIUS = 2.0
MIN_SOURCE_COVERAGE = 0.2
NONRIGID_WAVELENGTH = 0.4
ROTATION_PER_METER = 1.0


class JumpLevel(int, Enum):
    """Frame-jump level; higher levels mean larger deformations."""

    J2 = 2
    J4 = 4
    J8 = 8
    J16 = 16

    @property
    def target_displacement(self) -> float:
        """Mean node displacement in meters."""
        return {2: 0.01, 4: 0.02, 8: 0.04, 16: 0.08}[self.value]

    @classmethod
    def parse(cls, value: Union[int, str, "JumpLevel"]) -> "JumpLevel":
        if isinstance(value, str):
            value = value.strip().upper().lstrip("J")
        try:
            return cls(int(value))
        except ValueError:
            raise ConfigError(f"jump level must be one of 2, 4, 8, 16, got {value!r}") from None


class SceneConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    width: int = Field(default=320, ge=32)
    height: int = Field(default=240, ge=24)
    graph: GraphConfig = GraphConfig()
    base_depth: float = Field(default=1.2, ge=0.5, le=2.0)
    bumps: int = Field(default=5, ge=0)
    bump_height: float = Field(default=0.12, ge=0)
    bump_sigma: float = Field(default=0.18, gt=0)
    texture_periods: Tuple[float, ...] = (8.0, 5.0)
    texture_weights: Tuple[float, ...] = (0.6, 0.4)
    jump_level: JumpLevel = JumpLevel.J2
    magnitude: Optional[float] = Field(default=None, ge=0)
    translation: Optional[Tuple[float, float, float]] = None
    nonrigid_fraction: float = Field(default=0.1, ge=0, le=1)

    @field_validator("jump_level", mode="before")
    @classmethod
    def _parse_level(cls, value):
        return JumpLevel.parse(value)

    @model_validator(mode="after")
    def _check(self) -> "SceneConfig":
        reach = self.bumps * self.bump_height
        if self.base_depth - reach < 0.5 or self.base_depth + reach > 2.0:
            raise ValueError(
                f"surface depth {self.base_depth} +/- {reach} leaves [0.5, 2.0] m"
            )
        if len(self.texture_periods) != len(self.texture_weights):
            raise ValueError("texture_periods and texture_weights differ in length")
        if any(p < 2 for p in self.texture_periods):
            raise ValueError("texture periods must span at least 2 graph cells")
        return self

    @property
    def displacement(self) -> float:
        return self.jump_level.target_displacement if self.magnitude is None else self.magnitude

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics.default_for(self.width, self.height)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    source: Frame
    target: Frame
    gt_flow: np.ndarray
    gt_graph: DeformGraph
    jump_level: JumpLevel
    seed: int = 0
    config: SceneConfig = field(default_factory=SceneConfig)
    dense_flow: Optional[np.ndarray] = None

    def pixel_flow(self) -> np.ndarray:
        """Per target pixel displacement (H, W, 3); node flow upsampled when not recorded."""
        if self.dense_flow is not None:
            return self.dense_flow
        return densify_node_flow(
            self.gt_graph, self.gt_flow, self.target.height, self.target.width
        )

    @property
    def mean_displacement(self) -> float:
        valid = self.gt_graph.valid
        return float(np.linalg.norm(self.gt_flow[valid], axis=-1).mean())

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "jump_level": self.jump_level.value,
            "mean_displacement": self.mean_displacement,
        }


class _HeightField:
    def __init__(self, cfg: SceneConfig, rng: np.random.Generator):
        self.base = cfg.base_depth
        self.amps = rng.uniform(-cfg.bump_height, cfg.bump_height, cfg.bumps)
        self.centers = rng.uniform([0, 0], [cfg.width, cfg.height], (cfg.bumps, 2))
        self.sigmas = cfg.bump_sigma * cfg.width * rng.uniform(0.7, 1.3, cfg.bumps)

    def depth(self, pixels: np.ndarray) -> np.ndarray:
        diff = pixels[..., None, :] - self.centers
        dist2 = (diff**2).sum(-1)
        return self.base + (self.amps * np.exp(-dist2 / (2 * self.sigmas**2))).sum(-1)


class _ValueNoise:
    """Multi-octave value noise with quintic fade, continuous in pixel coordinates."""

    def __init__(self, cfg: SceneConfig, rng: np.random.Generator):
        cell = cfg.width / cfg.graph.w
        self.octaves = []
        for period_cells, weight in zip(cfg.texture_periods, cfg.texture_weights):
            period = period_cells * cell
            shape = (int(np.ceil(cfg.height / period)) + 3, int(np.ceil(cfg.width / period)) + 3)
            self.octaves.append((period, weight, rng.uniform(0, 1, shape)))
        self.total = sum(w for _, w, _ in self.octaves)

    @staticmethod
    def _fade(t):
        return t * t * t * (t * (t * 6 - 15) + 10)

    def __call__(self, pixels: np.ndarray) -> np.ndarray:
        out = np.zeros(pixels.shape[:-1])
        for period, weight, lattice in self.octaves:
            h, w = lattice.shape
            gx = np.clip(pixels[..., 0] / period + 1, 0, w - 1 - 1e-9)
            gy = np.clip(pixels[..., 1] / period + 1, 0, h - 1 - 1e-9)
            x0, y0 = np.floor(gx).astype(int), np.floor(gy).astype(int)
            fx, fy = self._fade(gx - x0), self._fade(gy - y0)
            top = (1 - fx) * lattice[y0, x0] + fx * lattice[y0, x0 + 1]
            bottom = (1 - fx) * lattice[y0 + 1, x0] + fx * lattice[y0 + 1, x0 + 1]
            out += weight * ((1 - fy) * top + fy * bottom)
        return out / self.total


class _Deformation:
    """Dense displacement d(X) = (R - I)(X - c) + t + a * sin(k . X + phi), scaled by s."""

    def __init__(self, cfg: SceneConfig, rng: np.random.Generator, center: np.ndarray):
        self.center = center
        self.axis = _unit(rng.standard_normal(3))
        self.direction = _unit(rng.standard_normal(3))
        self.wave = rng.standard_normal((3, 3)) * (2 * np.pi / NONRIGID_WAVELENGTH) / np.sqrt(3)
        self.phase = rng.uniform(0, 2 * np.pi, 3)
        self.amp_dir = _unit(rng.standard_normal(3))
        self.nonrigid = cfg.nonrigid_fraction
        self.fixed_translation = (
            None if cfg.translation is None else np.asarray(cfg.translation, dtype=np.float64)
        )
        self.scale = 0.0

    def __call__(self, points: np.ndarray) -> np.ndarray:
        if self.fixed_translation is not None:
            return np.broadcast_to(self.fixed_translation, points.shape).copy()
        s = self.scale
        rot = so3_exp(s * ROTATION_PER_METER * self.axis)
        rigid = (points - self.center) @ (rot - np.eye(3)).T + s * self.direction
        waves = np.sin(points @ self.wave.T + self.phase)
        return rigid + s * self.nonrigid * self.amp_dir * waves

    def calibrate(self, node_points: np.ndarray, target: float):
        if self.fixed_translation is not None or target == 0 or len(node_points) == 0:
            return
        self.scale = target
        for _ in range(50):
            mean = np.linalg.norm(self(node_points), axis=-1).mean()
            if mean == 0:
                break
            self.scale *= target / mean
            if abs(mean / target - 1) < 1e-13:
                break


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _pixel_grid(width: int, height: int) -> np.ndarray:
    u, v = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    return np.stack([u, v], axis=-1)


def _to_color(gray: np.ndarray) -> np.ndarray:
    level = np.round(255 * (0.1 + 0.8 * np.clip(gray, 0, 1))).astype(np.uint8)
    return np.repeat(level[..., None], 3, axis=-1)


class _Renderer:
    def __init__(self, K: Intrinsics, surface: _HeightField, deform: _Deformation):
        self.K, self.surface, self.deform = K, surface, deform

    def target_points(self, pixels: np.ndarray) -> np.ndarray:
        K = self.K
        z = self.surface.depth(pixels)
        return np.stack(
            [(pixels[..., 0] - K.cx) * z / K.fx, (pixels[..., 1] - K.cy) * z / K.fy, z], axis=-1
        )

    def warp(self, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Target pixel -> (source pixel, source depth) of the moved surface point."""
        points = self.target_points(pixels)
        moved = points + self.deform(points)
        z = moved[..., 2]
        safe = np.where(z > 0, z, 1.0)
        K = self.K
        q = np.stack([K.fx * moved[..., 0] / safe + K.cx, K.fy * moved[..., 1] / safe + K.cy], -1)
        return q, z

    def invert(self, pixels: np.ndarray, guess: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Newton solve warp(p) = pixel per row; returns p and a converged mask."""
        p = guess.copy()
        h = 1e-3
        ex, ey = np.array([h, 0.0]), np.array([0.0, h])
        for _ in range(NEWTON_ITERS):
            q, _ = self.warp(p)
            F = q - pixels
            if np.abs(F).max(initial=0) < NEWTON_TOL:
                break
            jx = (self.warp(p + ex)[0] - self.warp(p - ex)[0]) / (2 * h)
            jy = (self.warp(p + ey)[0] - self.warp(p - ey)[0]) / (2 * h)
            det = jx[:, 0] * jy[:, 1] - jy[:, 0] * jx[:, 1]
            ok = np.abs(det) > 1e-12
            det = np.where(ok, det, 1.0)
            dx = (jy[:, 1] * F[:, 0] - jy[:, 0] * F[:, 1]) / det
            dy = (-jx[:, 1] * F[:, 0] + jx[:, 0] * F[:, 1]) / det
            p = p - np.where(ok[:, None], np.stack([dx, dy], -1), 0.0)
        q, z = self.warp(p)
        converged = (np.abs(q - pixels).max(axis=-1) < INVERSE_TOL) & (z > 0)
        return p, converged


def _render_source(
    renderer: _Renderer, texture: _ValueNoise, width: int, height: int
) -> Tuple[np.ndarray, np.ndarray]:
    pixels = _pixel_grid(width, height).reshape(-1, 2)
    q, z = renderer.warp(pixels)
    qi = np.round(q).astype(np.int64)
    inside = (z > 0) & (qi[:, 0] >= 0) & (qi[:, 0] < width) & (qi[:, 1] >= 0) & (qi[:, 1] < height)
    splat_idx = np.flatnonzero(inside)
    keys = qi[splat_idx, 1] * width + qi[splat_idx, 0]
    order = np.lexsort((z[splat_idx], keys))
    unique_keys, first = np.unique(keys[order], return_index=True)
    winner = splat_idx[order[first]]

    guess = np.zeros((height * width, 2))
    hit = np.zeros(height * width, dtype=bool)
    guess[unique_keys] = pixels[winner]
    hit[unique_keys] = True
    dist, (near_v, near_u) = distance_transform_edt(
        ~hit.reshape(height, width), return_indices=True
    )
    near = (near_v * width + near_u).ravel()
    guess = guess[near]
    candidate = dist.ravel() <= SPLAT_RADIUS

    depth = np.zeros(height * width)
    gray = np.zeros(height * width)
    idx = np.flatnonzero(candidate)
    p, converged = renderer.invert(pixels[idx], guess[idx])
    in_target = (
        (p[:, 0] >= 0) & (p[:, 0] <= width - 1) & (p[:, 1] >= 0) & (p[:, 1] <= height - 1)
    )
    good = converged & in_target
    idx, p = idx[good], p[good]
    depth[idx] = renderer.warp(p)[1]
    gray[idx] = texture(p)
    color = _to_color(gray.reshape(height, width))
    color[depth.reshape(height, width) == 0] = 0
    return color, depth.reshape(height, width)


@task(name="generate_scene")
def generate_scene(seed: int = 0, cfg: Optional[SceneConfig] = None) -> SyntheticScene:
    cfg = cfg or SceneConfig()
    rng = np.random.default_rng(seed)
    K = cfg.intrinsics
    surface = _HeightField(cfg, rng)
    texture = _ValueNoise(cfg, rng)

    pixels = _pixel_grid(cfg.width, cfg.height)
    target_depth = surface.depth(pixels)
    target = Frame(
        color=_to_color(texture(pixels)),
        depth=target_depth,
        intrinsics=K,
        id=f"s{seed:03d}_target",
    )
    graph = build_graph(target, cfg.graph)
    if not graph.valid.any():
        raise DegenerateScene("no valid graph nodes on the generated surface")

    renderer = _Renderer(K, surface, None)
    node_points = renderer.target_points(graph.node_pixel.astype(np.float64))
    center = node_points[graph.valid].mean(axis=0)
    deform = _Deformation(cfg, rng, center)
    renderer.deform = deform
    still = cfg.translation is None and cfg.displacement == 0
    deform.calibrate(node_points[graph.valid], cfg.displacement)

    if still:
        source_color, source_depth = target.color, target.depth
        gt_flow = np.zeros((graph.n_nodes, 3))
        dense_flow = np.zeros(target.color.shape)
    else:
        source_color, source_depth = _render_source(renderer, texture, cfg.width, cfg.height)
        gt_flow = deform(node_points)
        dense_flow = deform(renderer.target_points(pixels))
        coverage = float((source_depth > 0).mean())
        if coverage < MIN_SOURCE_COVERAGE:
            raise DegenerateScene(
                f"only {coverage:.1%} of the source image sees the surface after the warp"
            )
        logging.debug(f"scene {seed}: source coverage {coverage:.1%}")

    source = Frame(color=source_color, depth=source_depth, intrinsics=K, id=f"s{seed:03d}_source")
    gt_flow = np.where(graph.valid[:, None], gt_flow, 0.0)
    gt_graph = fit_local_rotations(graph.with_state(trans=gt_flow))
    return SyntheticScene(
        source=source,
        target=target,
        gt_flow=gt_flow,
        gt_graph=gt_graph,
        jump_level=cfg.jump_level,
        seed=seed,
        config=cfg,
        dense_flow=dense_flow,
    )


def scene_dir_name(seed: int, level: JumpLevel) -> str:
    return f"scene_s{seed:03d}_j{int(level):02d}"


def save_gt_flow(gt_flow: np.ndarray, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(np.asarray(gt_flow, dtype=np.float64).tolist()))


def load_gt_flow(path: Union[str, Path]) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise IoError(f"cannot read {path}", path=str(path)) from e
    try:
        flow = np.asarray(json.loads(text), dtype=np.float64)
    except (json.JSONDecodeError, ValueError, TypeError) as e:
        raise FormatError(f"{path} is not a list of [x, y, z] triples: {e}", path=str(path)) from e
    if flow.ndim != 2 or flow.shape[1] != 3:
        raise FormatError(f"{path} holds shape {flow.shape}, expected (n, 3)", path=str(path))
    return flow


def export_scene(
    scene: SyntheticScene, directory: Union[str, Path], extra_meta: Optional[dict] = None
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_frame_dir(scene.source, directory / "source")
    save_frame_dir(scene.target, directory / "target")
    save_gt_flow(scene.gt_flow, directory / "gt_flow.json")
    meta = {
        "seed": scene.seed,
        "jump_level": scene.jump_level.value,
        "config": scene.config.model_dump(mode="json"),
    }
    meta.update(extra_meta or {})
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return directory


def load_scene(directory: Union[str, Path]) -> SyntheticScene:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    try:
        meta = json.loads(meta_path.read_text())
    except OSError as e:
        raise IoError(f"cannot read {meta_path}", path=str(meta_path)) from e
    except json.JSONDecodeError as e:
        raise FormatError(f"{meta_path} is not JSON: {e}", path=str(meta_path)) from e
    try:
        cfg = SceneConfig.model_validate(meta["config"])
    except (KeyError, ValidationError) as e:
        raise FormatError(f"bad scene config in {meta_path}: {e}", path=str(meta_path)) from e

    source = load_frame_dir(directory / "source", frame_id="source")
    target = load_frame_dir(directory / "target", frame_id="target")
    gt_flow = load_gt_flow(directory / "gt_flow.json")
    graph = build_graph(target, cfg.graph)
    if gt_flow.shape != (graph.n_nodes, 3):
        raise FormatError(
            f"gt_flow has {gt_flow.shape[0]} nodes, graph has {graph.n_nodes}",
            path=str(directory / "gt_flow.json"),
        )
    return SyntheticScene(
        source=source,
        target=target,
        gt_flow=gt_flow,
        gt_graph=fit_local_rotations(graph.with_state(trans=gt_flow)),
        jump_level=JumpLevel.parse(meta.get("jump_level", cfg.jump_level)),
        seed=int(meta.get("seed", 0)),
        config=cfg,
    )
