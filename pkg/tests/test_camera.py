import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from warpgraph.engine.errors import BehindCamera, NonPositiveDepth
from warpgraph.engine.frames import Intrinsics, back_project, project, warp_pixel

K = Intrinsics.default_for(320, 240)


@settings(max_examples=200, deadline=None)
@given(
    u=st.floats(0, 319),
    v=st.floats(0, 239),
    depth=st.floats(0.1, 10.0),
)
def test_project_inverts_back_project(u, v, depth):
    pixel = np.array([u, v])
    point = back_project(pixel, depth, K)
    assert point[2] == pytest.approx(depth)
    np.testing.assert_allclose(project(point, K), pixel, atol=1e-9)


def test_principal_point_maps_to_optical_axis():
    point = back_project([K.cx, K.cy], 2.0, K)
    np.testing.assert_allclose(point, [0.0, 0.0, 2.0])


def test_back_project_rejects_non_positive_depth():
    with pytest.raises(NonPositiveDepth):
        back_project([10.0, 10.0], 0.0, K)


def test_project_rejects_points_behind_camera():
    with pytest.raises(BehindCamera):
        project([0.1, 0.1, -1.0], K)


def test_warp_without_motion_is_identity():
    pixels = np.array([[5.0, 7.0], [100.5, 80.25]])
    np.testing.assert_allclose(warp_pixel(pixels, np.array([1.0, 1.5]), np.zeros(3), K, K), pixels)


def test_depth_translation_shrinks_toward_principal_point():
    moved = warp_pixel([K.cx + 40.0, K.cy], 1.0, [0.0, 0.0, 1.0], K, K)
    np.testing.assert_allclose(moved, [K.cx + 20.0, K.cy])


def test_projection_jacobian_matches_finite_differences():
    point = np.array([0.1, -0.2, 1.3])
    analytic = K.projection_jacobian(point)
    step = 1e-6
    numeric = np.column_stack(
        [(project(point + step * e, K) - project(point - step * e, K)) / (2 * step) for e in np.eye(3)]
    )
    np.testing.assert_allclose(analytic, numeric, rtol=1e-6)


def test_intrinsics_validation():
    with pytest.raises(ValidationError):
        Intrinsics(fx=-1, fy=500, cx=10, cy=10, width=20, height=20)
    with pytest.raises(ValidationError):
        Intrinsics(fx=500, fy=500, cx=30, cy=10, width=20, height=20)
