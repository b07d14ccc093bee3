from dataclasses import dataclass

import numpy as np

from warpgraph.engine.errors import DimensionMismatch, FormatError
from warpgraph.engine.frames.camera import Intrinsics


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Frame:
    """Calibrated color + depth pair. Depth in meters, 0 marks invalid."""

    color: np.ndarray
    depth: np.ndarray
    intrinsics: Intrinsics
    id: str = ""

    def __post_init__(self):
        color = _frozen(self.color, np.uint8)
        depth = _frozen(self.depth, np.float64)
        K = self.intrinsics
        if color.shape != (K.height, K.width, 3):
            raise DimensionMismatch(
                f"color is {color.shape}, intrinsics expect {(K.height, K.width, 3)}"
            )
        if depth.shape != (K.height, K.width):
            raise DimensionMismatch(
                f"depth is {depth.shape}, intrinsics expect {(K.height, K.width)}"
            )
        if not np.all(np.isfinite(depth)) or np.any(depth < 0):
            raise ValueError("depth must be finite and non-negative")
        object.__setattr__(self, "color", color)
        object.__setattr__(self, "depth", depth)

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    @property
    def valid_depth(self) -> np.ndarray:
        return self.depth > 0

    def intensity(self) -> np.ndarray:
        """Luma in [0, 1], shape (H, W)."""
        rgb = self.color.astype(np.float64) / 255.0
        return rgb @ np.array([0.299, 0.587, 0.114])

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "width": self.width,
            "height": self.height,
            "valid_depth_fraction": float(self.valid_depth.mean()),
        }


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-node feature grid stored as (h, w, c)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise DimensionMismatch(f"feature map must be (h, w, c), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise FormatError("feature map contains non-finite values")
        object.__setattr__(self, "data", _frozen(data, data.dtype))

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> int:
        return self.data.shape[2]

    def to_json(self) -> dict:
        return {"w": self.w, "h": self.h, "c": self.c}
