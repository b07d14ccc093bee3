import numpy as np
import pytest

from tests.conftest import make_frame
from warpgraph.engine.errors import DimensionMismatch, GridTooLarge, NonFinite
from warpgraph.engine.graph import (
    DOF_PER_NODE,
    GraphConfig,
    GridLattice,
    apply_increment,
    build_graph,
    fit_local_rotations,
    load_graph_json,
    pack_state,
    save_graph_json,
    so3_exp,
)

SMALL = GraphConfig(w=8, h=6)


def test_planar_frame_graph_is_fully_connected(planar_frame):
    g = build_graph(planar_frame, SMALL)
    assert g.n_nodes == 48
    assert g.state_dim == 48 * DOF_PER_NODE
    assert g.valid.all()
    interior = g.edge_mask[1:-1, 1:-1]
    assert interior.all()
    assert not g.edge_mask[0, :, :3].any()
    i, j = g.edges()
    pairs = set(zip(i.tolist(), j.tolist()))
    assert all((b, a) in pairs for a, b in pairs)


def test_invalid_depth_masks_nodes_and_edges(intrinsics):
    depth = np.ones((intrinsics.height, intrinsics.width))
    depth[:, :16] = 0.0
    g = build_graph(make_frame(intrinsics, depth), SMALL)
    assert not g.node_mask[:, :2].any()
    assert g.node_mask[:, 3:].all()
    assert not g.edge_mask[:, :2].any()
    i, j = g.edges()
    assert g.valid[i].all() and g.valid[j].all()


def test_depth_discontinuity_and_range_mask_nodes(intrinsics):
    depth = np.ones((intrinsics.height, intrinsics.width))
    depth[:, 32:] = 3.0
    g = build_graph(make_frame(intrinsics, depth), SMALL)
    assert not g.node_mask[:, 4:].any()
    assert g.node_mask[:, :4].all()


def test_grid_larger_than_image_is_rejected(intrinsics):
    with pytest.raises(GridTooLarge):
        GridLattice.for_image(intrinsics.width, intrinsics.height, 100, 6)


def test_lattice_grid_and_pixel_coordinates_agree():
    lattice = GridLattice.for_image(320, 240, 16, 12)
    anchors = lattice.anchors()
    np.testing.assert_allclose(lattice.to_grid(anchors)[17], [1.0, 1.0])
    np.testing.assert_allclose(lattice.to_pixels(lattice.to_grid(anchors)), anchors)


def test_apply_increment_updates_only_valid_nodes(intrinsics, rng):
    depth = np.ones((intrinsics.height, intrinsics.width))
    depth[:, :8] = 0.0
    g = build_graph(make_frame(intrinsics, depth), SMALL)
    delta = 0.1 * rng.standard_normal(g.state_dim)
    moved = apply_increment(g, delta)

    per_node = delta.reshape(g.n_nodes, DOF_PER_NODE)
    valid = g.valid
    np.testing.assert_allclose(moved.trans[valid], per_node[valid, 3:])
    np.testing.assert_array_equal(moved.trans[~valid], 0.0)
    np.testing.assert_allclose(moved.rot[valid], so3_exp(per_node[valid, :3]), atol=1e-12)
    gram = np.einsum("nji,njk->nik", moved.rot, moved.rot)
    np.testing.assert_allclose(gram, np.broadcast_to(np.eye(3), gram.shape), atol=1e-12)
    np.testing.assert_allclose(pack_state(moved).reshape(-1, 6)[:, 3:], moved.trans)


def test_quarter_turn_about_z_maps_x_to_y(planar_frame):
    quarter = so3_exp(np.array([0.0, 0.0, np.pi / 2]))
    np.testing.assert_allclose(quarter @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-12)

    g = build_graph(planar_frame, SMALL)
    delta = np.zeros(g.state_dim)
    delta[DOF_PER_NODE * 9 + 2] = np.pi / 2
    moved = apply_increment(g, delta)
    np.testing.assert_allclose(moved.rot[9] @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(moved.rot[10], np.eye(3), atol=1e-15)


def test_rotations_stay_orthonormal_over_many_increments(planar_frame, rng):
    g = build_graph(planar_frame, SMALL)
    for _ in range(200):
        g = apply_increment(g, 0.3 * rng.standard_normal(g.state_dim))
    gram = np.einsum("nji,njk->nik", g.rot, g.rot)
    np.testing.assert_allclose(gram, np.broadcast_to(np.eye(3), gram.shape), atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(g.rot), 1.0, atol=1e-12)


def test_apply_increment_rejects_bad_input(planar_frame):
    g = build_graph(planar_frame, SMALL)
    with pytest.raises(DimensionMismatch):
        apply_increment(g, np.zeros(5))
    bad = np.zeros(g.state_dim)
    bad[3] = np.nan
    with pytest.raises(NonFinite):
        apply_increment(g, bad)


def test_graph_arrays_are_read_only(planar_frame):
    g = build_graph(planar_frame, SMALL)
    with pytest.raises(ValueError):
        g.trans[0, 0] = 1.0


def test_fit_local_rotations_recovers_a_rigid_rotation(planar_frame):
    g = build_graph(planar_frame, SMALL)
    R = so3_exp(np.array([0.02, -0.05, 0.1]))
    center = g.node_pos.mean(axis=0)
    moved = (g.node_pos - center) @ R.T + center
    fitted = fit_local_rotations(g.with_state(trans=moved - g.node_pos))
    np.testing.assert_allclose(fitted.rot, np.broadcast_to(R, fitted.rot.shape), atol=1e-9)


def test_graph_json_round_trip(tmp_path, planar_frame, rng):
    g = apply_increment(build_graph(planar_frame, SMALL), 0.01 * rng.standard_normal(288))
    save_graph_json(g, tmp_path / "graph.json")
    loaded = load_graph_json(tmp_path / "graph.json")
    np.testing.assert_array_equal(loaded.rot, g.rot)
    np.testing.assert_array_equal(loaded.trans, g.trans)
    np.testing.assert_array_equal(loaded.edge_mask, g.edge_mask)
    assert loaded.lattice == g.lattice
