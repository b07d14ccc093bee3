from typing import Optional, Tuple, Union

import numpy as np

from warpgraph.engine.errors import InvalidCorner, OutOfBounds
from warpgraph.engine.frames.models import FeatureMap


def _as_grid(grid) -> Tuple[np.ndarray, bool]:
    if isinstance(grid, FeatureMap):
        grid = grid.data
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        return grid[:, :, None], True
    return grid, False


def bilinear_many(
    grid: np.ndarray, uv: np.ndarray, valid: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized bilinear sampling of an (h, w, c) grid at (N, 2) coordinates.

    Returns values (N, c), Jacobians (N, c, 2) with columns d/dgx, d/dgy, and a
    boolean (N,) mask of probes that are in bounds with all 4 corners valid.
    Values of rejected probes are unspecified.
    """
    h, w = grid.shape[:2]
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    gx, gy = uv[:, 0], uv[:, 1]
    ok = np.isfinite(gx) & np.isfinite(gy)
    ok &= (gx >= 0) & (gx <= w - 1) & (gy >= 0) & (gy <= h - 1)

    gx_safe = np.where(ok, gx, 0.0)
    gy_safe = np.where(ok, gy, 0.0)
    x0 = np.clip(np.floor(gx_safe).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(gy_safe).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (gx_safe - x0)[:, None]
    fy = (gy_safe - y0)[:, None]

    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        ok &= valid[y0, x0] & valid[y0, x1] & valid[y1, x0] & valid[y1, x1]

    a = grid[y0, x0]
    b = grid[y0, x1]
    c = grid[y1, x0]
    d = grid[y1, x1]
    values = (1 - fx) * (1 - fy) * a + fx * (1 - fy) * b + (1 - fx) * fy * c + fx * fy * d
    jac = np.empty(values.shape + (2,))
    jac[..., 0] = (1 - fy) * (b - a) + fy * (d - c)
    jac[..., 1] = (1 - fx) * (c - a) + fx * (d - b)
    return values, jac, ok


def sample_bilinear(
    grid: Union[FeatureMap, np.ndarray],
    uv,
    valid: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Samples one continuous grid coordinate (gx, gy).

    A 2D grid yields a scalar value and a (2,) gradient; an (h, w, c) grid or
    FeatureMap yields (c,) values and a (c, 2) Jacobian.
    """
    data, scalar = _as_grid(grid)
    h, w = data.shape[:2]
    uv = np.asarray(uv, dtype=np.float64)
    if not (0 <= uv[0] <= w - 1 and 0 <= uv[1] <= h - 1):
        raise OutOfBounds(f"{tuple(uv)} outside [0, {w - 1}] x [0, {h - 1}]")
    values, jac, ok = bilinear_many(data, uv[None, :], valid)
    if not ok[0]:
        raise InvalidCorner(f"a corner around {tuple(uv)} is masked invalid")
    if scalar:
        return values[0, 0], jac[0, 0]
    return values[0], jac[0]
