"""Pinhole camera model.

Continuous pixel coordinates put integer values at pixel centers. All math is
float64 and vectorized: a ``pixel`` of shape ``(..., 2)`` goes with a ``depth``
of shape ``(...)``.
"""

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from warpgraph.engine.errors import BehindCamera, NonPositiveDepth


class Intrinsics(BaseModel):
    model_config = ConfigDict(frozen=True)

    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    depth_scale: float = Field(default=0.001, gt=0)

    @model_validator(mode="after")
    def _principal_point_inside(self) -> "Intrinsics":
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )
        return self

    @classmethod
    def default_for(cls, width: int, height: int, depth_scale: float = 0.001):
        """Roughly Kinect-like focal length scaled to the image width."""
        focal = 0.82 * width
        return cls(
            fx=focal,
            fy=focal,
            cx=(width - 1) / 2.0,
            cy=(height - 1) / 2.0,
            width=width,
            height=height,
            depth_scale=depth_scale,
        )

    def projection_jacobian(self, points: np.ndarray) -> np.ndarray:
        """d(project)/d(point), shape ``(..., 2, 3)``."""
        points = np.asarray(points, dtype=np.float64)
        x, y, z = points[..., 0], points[..., 1], points[..., 2]
        jac = np.zeros(points.shape[:-1] + (2, 3))
        jac[..., 0, 0] = self.fx / z
        jac[..., 0, 2] = -self.fx * x / (z * z)
        jac[..., 1, 1] = self.fy / z
        jac[..., 1, 2] = -self.fy * y / (z * z)
        return jac


def back_project(pixel, depth, K: Intrinsics) -> np.ndarray:
    pixel = np.asarray(pixel, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise NonPositiveDepth("back_project needs depth > 0")
    u, v = pixel[..., 0], pixel[..., 1]
    return np.stack(
        [(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth * np.ones_like(u)],
        axis=-1,
    )


def project(point, K: Intrinsics) -> np.ndarray:
    point = np.asarray(point, dtype=np.float64)
    z = point[..., 2]
    if np.any(z <= 0):
        raise BehindCamera("project needs z > 0")
    return np.stack(
        [K.fx * point[..., 0] / z + K.cx, K.fy * point[..., 1] / z + K.cy], axis=-1
    )


def warp_pixel(pixel, depth, t, K_src: Intrinsics, K_tgt: Intrinsics) -> np.ndarray:
    """Moves a target pixel by a 3D translation and projects it into the source camera."""
    moved = back_project(pixel, depth, K_tgt) + np.asarray(t, dtype=np.float64)
    return project(moved, K_src)
