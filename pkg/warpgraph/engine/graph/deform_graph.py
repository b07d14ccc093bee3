"""Deformation graph on a uniform grid over the target image."""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from warpgraph.engine.errors import (
    DimensionMismatch,
    FormatError,
    GridTooLarge,
    IoError,
    NonFinite,
)
from warpgraph.engine.frames.camera import back_project
from warpgraph.engine.frames.models import Frame
from warpgraph.engine.graph.rotations import (
    reorthonormalize,
    rotations_from_covariance,
    so3_exp,
)

DOF_PER_NODE = 6

# (drow, dcol); direction k and 7 - k are opposite
NEIGHBOR_OFFSETS = (
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
)


class GraphConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    w: int = Field(default=16, ge=2)
    h: int = Field(default=12, ge=2)
    max_depth: float = Field(default=2.0, gt=0)
    discontinuity_thresh: float = Field(default=0.1, gt=0)
    edge_len_thresh: float = Field(default=0.3, gt=0)


@dataclass(frozen=True)
class GridLattice:
    """Maps between full-resolution pixels and continuous grid coordinates.

    Anchors sit at integer pixels ``origin + step * index``; grid coordinate
    ``(gx, gy)`` is the continuous index along that lattice.
    """

    w: int
    h: int
    step_x: int
    step_y: int
    origin_u: int
    origin_v: int

    @classmethod
    def for_image(cls, width: int, height: int, w: int, h: int) -> "GridLattice":
        if w > width or h > height:
            raise GridTooLarge(f"{w}x{h} grid does not fit a {width}x{height} image")
        step_x, step_y = width // w, height // h
        return cls(w, h, step_x, step_y, step_x // 2, step_y // 2)

    def anchors(self) -> np.ndarray:
        cols, rows = np.meshgrid(np.arange(self.w), np.arange(self.h))
        u = self.origin_u + self.step_x * cols
        v = self.origin_v + self.step_y * rows
        return np.stack([u.ravel(), v.ravel()], axis=-1).astype(np.int64)

    def to_grid(self, pixels: np.ndarray) -> np.ndarray:
        pixels = np.asarray(pixels, dtype=np.float64)
        return np.stack(
            [
                (pixels[..., 0] - self.origin_u) / self.step_x,
                (pixels[..., 1] - self.origin_v) / self.step_y,
            ],
            axis=-1,
        )

    def to_pixels(self, grid: np.ndarray) -> np.ndarray:
        grid = np.asarray(grid, dtype=np.float64)
        return np.stack(
            [
                self.origin_u + self.step_x * grid[..., 0],
                self.origin_v + self.step_y * grid[..., 1],
            ],
            axis=-1,
        )

    @property
    def scale(self) -> np.ndarray:
        """d(grid)/d(pixel) diagonal."""
        return np.array([1.0 / self.step_x, 1.0 / self.step_y])

    def sample_nodes(self, image: np.ndarray) -> np.ndarray:
        """Point-samples a full-resolution (H, W, ...) image at the anchors, as (h, w, ...)."""
        anchors = self.anchors()
        values = np.asarray(image)[anchors[:, 1], anchors[:, 0]]
        return values.reshape((self.h, self.w) + values.shape[1:])


@dataclass(frozen=True, eq=False)
class DeformGraph:
    """Grid of 6-DOF nodes. Node i = row * w + col; masks are (h, w) and (h, w, 8)."""

    lattice: GridLattice
    node_pixel: np.ndarray
    node_pos: np.ndarray
    rot: np.ndarray
    trans: np.ndarray
    node_mask: np.ndarray
    edge_mask: np.ndarray

    def __post_init__(self):
        n = self.lattice.w * self.lattice.h
        fields = {
            "node_pixel": (np.int64, (n, 2)),
            "node_pos": (np.float64, (n, 3)),
            "rot": (np.float64, (n, 3, 3)),
            "trans": (np.float64, (n, 3)),
            "node_mask": (bool, (self.lattice.h, self.lattice.w)),
            "edge_mask": (bool, (self.lattice.h, self.lattice.w, 8)),
        }
        for name, (dtype, shape) in fields.items():
            value = np.array(getattr(self, name), dtype=dtype, copy=True)
            if value.shape != shape:
                raise DimensionMismatch(f"{name} is {value.shape}, expected {shape}")
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def w(self) -> int:
        return self.lattice.w

    @property
    def h(self) -> int:
        return self.lattice.h

    @property
    def n_nodes(self) -> int:
        return self.w * self.h

    @property
    def state_dim(self) -> int:
        return DOF_PER_NODE * self.n_nodes

    @property
    def valid(self) -> np.ndarray:
        return self.node_mask.ravel()

    @property
    def deformed_pos(self) -> np.ndarray:
        return self.node_pos + self.trans

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Directed valid edges as (i, j) index arrays in (node, direction) order."""
        rows, cols, dirs = np.nonzero(self.edge_mask)
        offsets = np.asarray(NEIGHBOR_OFFSETS)[dirs]
        i = rows * self.w + cols
        j = (rows + offsets[:, 0]) * self.w + (cols + offsets[:, 1])
        return i.astype(np.int64), j.astype(np.int64)

    def with_state(
        self, rot: Optional[np.ndarray] = None, trans: Optional[np.ndarray] = None
    ) -> "DeformGraph":
        return dataclasses.replace(
            self,
            rot=self.rot if rot is None else rot,
            trans=self.trans if trans is None else trans,
        )

    def to_json(self) -> dict:
        return {
            "w": self.w,
            "h": self.h,
            "valid_nodes": int(self.node_mask.sum()),
            "edges": int(self.edge_mask.sum()),
        }


def _discontinuity_mask(depth: np.ndarray, anchors: np.ndarray, thresh: float):
    padded = np.pad(depth, 1, mode="edge")
    node_depth = depth[anchors[:, 1], anchors[:, 0]]
    worst = np.zeros(len(anchors))
    for dv in (-1, 0, 1):
        for du in (-1, 0, 1):
            window = padded[anchors[:, 1] + 1 + dv, anchors[:, 0] + 1 + du]
            worst = np.maximum(worst, np.abs(window - node_depth))
    return worst <= thresh


def build_graph(
    target: Frame,
    cfg: Optional[GraphConfig] = None,
    foreground_mask: Optional[np.ndarray] = None,
) -> DeformGraph:
    cfg = cfg or GraphConfig()
    lattice = GridLattice.for_image(target.width, target.height, cfg.w, cfg.h)
    anchors = lattice.anchors()
    depth = target.depth
    node_depth = depth[anchors[:, 1], anchors[:, 0]]

    valid = (node_depth > 0) & (node_depth <= cfg.max_depth)
    if foreground_mask is not None:
        foreground_mask = np.asarray(foreground_mask, dtype=bool)
        if foreground_mask.shape != depth.shape:
            raise DimensionMismatch(
                f"foreground mask is {foreground_mask.shape}, frame is {depth.shape}"
            )
        valid &= foreground_mask[anchors[:, 1], anchors[:, 0]]
    valid &= _discontinuity_mask(depth, anchors, cfg.discontinuity_thresh)

    node_pos = np.zeros((len(anchors), 3))
    has_depth = node_depth > 0
    node_pos[has_depth] = back_project(
        anchors[has_depth], node_depth[has_depth], target.intrinsics
    )

    node_mask = valid.reshape(lattice.h, lattice.w)
    edge_mask = np.zeros((lattice.h, lattice.w, 8), dtype=bool)
    rows, cols = np.meshgrid(np.arange(lattice.h), np.arange(lattice.w), indexing="ij")
    for k, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
        nr, nc = rows + dr, cols + dc
        inside = (nr >= 0) & (nr < lattice.h) & (nc >= 0) & (nc < lattice.w)
        nr_c, nc_c = np.clip(nr, 0, lattice.h - 1), np.clip(nc, 0, lattice.w - 1)
        i = rows * lattice.w + cols
        j = nr_c * lattice.w + nc_c
        length = np.linalg.norm(node_pos[j] - node_pos[i], axis=-1)
        edge_mask[:, :, k] = (
            inside
            & node_mask
            & node_mask[nr_c, nc_c]
            & (length <= cfg.edge_len_thresh)
        )

    n = len(anchors)
    return DeformGraph(
        lattice=lattice,
        node_pixel=anchors,
        node_pos=node_pos,
        rot=np.tile(np.eye(3), (n, 1, 1)),
        trans=np.zeros((n, 3)),
        node_mask=node_mask,
        edge_mask=edge_mask,
    )


def pack_state(g: DeformGraph) -> np.ndarray:
    state = np.zeros((g.n_nodes, DOF_PER_NODE))
    state[:, 3:] = g.trans
    return state.ravel()


def apply_increment(g: DeformGraph, delta: np.ndarray) -> DeformGraph:
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (g.state_dim,):
        raise DimensionMismatch(
            f"increment has shape {delta.shape}, graph state is {g.state_dim}"
        )
    if not np.all(np.isfinite(delta)):
        raise NonFinite("increment contains non-finite values")

    per_node = delta.reshape(g.n_nodes, DOF_PER_NODE)
    valid = g.valid
    rot = np.array(g.rot)
    trans = np.array(g.trans)
    if np.any(valid):
        rot[valid] = so3_exp(per_node[valid, :3]) @ rot[valid]
        trans[valid] = trans[valid] + per_node[valid, 3:]
        rot = reorthonormalize(rot)
    return g.with_state(rot=rot, trans=trans)


def fit_local_rotations(g: DeformGraph, min_edges: int = 2) -> DeformGraph:
    """Per-node rotation best aligning rest edges to deformed edges."""
    i, j = g.edges()
    rest = g.node_pos[j] - g.node_pos[i]
    deformed = g.deformed_pos[j] - g.deformed_pos[i]
    cov = np.zeros((g.n_nodes, 3, 3))
    np.add.at(cov, i, np.einsum("ea,eb->eab", rest, deformed))
    counts = np.bincount(i, minlength=g.n_nodes)
    fit = counts >= min_edges
    rot = np.array(g.rot)
    if np.any(fit):
        rot[fit] = rotations_from_covariance(cov[fit])
    return g.with_state(rot=rot)


def graph_to_dict(g: DeformGraph) -> dict:
    lat = g.lattice
    return {
        "w": g.w,
        "h": g.h,
        "lattice": {
            "step_x": lat.step_x,
            "step_y": lat.step_y,
            "origin_u": lat.origin_u,
            "origin_v": lat.origin_v,
        },
        "rot": g.rot.reshape(g.n_nodes, 9).tolist(),
        "trans": g.trans.tolist(),
        "node_mask": g.node_mask.tolist(),
        "edge_mask": g.edge_mask.tolist(),
        "node_pixel": g.node_pixel.tolist(),
        "node_pos": g.node_pos.tolist(),
    }


def graph_from_dict(payload: dict) -> DeformGraph:
    try:
        w, h = int(payload["w"]), int(payload["h"])
        lat = payload["lattice"]
        lattice = GridLattice(
            w, h, lat["step_x"], lat["step_y"], lat["origin_u"], lat["origin_v"]
        )
        return DeformGraph(
            lattice=lattice,
            node_pixel=np.asarray(payload["node_pixel"]),
            node_pos=np.asarray(payload["node_pos"], dtype=np.float64),
            rot=np.asarray(payload["rot"], dtype=np.float64).reshape(w * h, 3, 3),
            trans=np.asarray(payload["trans"], dtype=np.float64),
            node_mask=np.asarray(payload["node_mask"], dtype=bool),
            edge_mask=np.asarray(payload["edge_mask"], dtype=bool),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed graph JSON: {e}") from e


def save_graph_json(g: DeformGraph, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(g)))


def load_graph_json(path: Union[str, Path]) -> DeformGraph:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise IoError(f"cannot read {path}", path=str(path)) from e
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path} is not JSON: {e}", path=str(path)) from e
    return graph_from_dict(payload)
