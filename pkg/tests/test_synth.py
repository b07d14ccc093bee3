import json

import numpy as np
import pytest
from pydantic import ValidationError

from tests.conftest import make_frame
from warpgraph.engine.errors import ConfigError, DimensionMismatch, FormatError, IoError
from warpgraph.engine.frames import Intrinsics
from warpgraph.engine.synth import (
    JumpLevel,
    SceneConfig,
    covisibility,
    densify_node_flow,
    evaluate,
    export_scene,
    filter_frame,
    filter_pair,
    generate_scene,
    load_gt_flow,
    load_scene,
    pcg_loss,
    rigid_flow,
    scene_dir_name,
)

SMALL = SceneConfig(width=160, height=120)


def test_generation_is_deterministic_per_seed(small_scene):
    again = generate_scene(0, SMALL)
    np.testing.assert_array_equal(again.source.color, small_scene.source.color)
    np.testing.assert_array_equal(again.source.depth, small_scene.source.depth)
    np.testing.assert_array_equal(again.gt_flow, small_scene.gt_flow)


def test_scene_shapes(small_scene):
    g = small_scene.gt_graph
    assert small_scene.source.depth.shape == (120, 160)
    assert small_scene.gt_flow.shape == (g.n_nodes, 3)
    assert small_scene.pixel_flow().shape == (120, 160, 3)
    np.testing.assert_array_equal(small_scene.gt_flow[~g.valid], 0.0)
    np.testing.assert_array_equal(g.trans, small_scene.gt_flow)


def test_mean_node_displacement_is_calibrated(small_scene):
    assert small_scene.jump_level is JumpLevel.J2
    assert small_scene.mean_displacement == pytest.approx(0.01, rel=1e-9)


@pytest.mark.parametrize("level", [4, 8, 16])
def test_jump_levels_scale_the_motion(level):
    scene = generate_scene(11, SceneConfig(width=64, height=48, jump_level=level))
    assert scene.mean_displacement == pytest.approx(JumpLevel(level).target_displacement, rel=1e-9)


def test_still_scene_repeats_the_target(still_scene):
    np.testing.assert_array_equal(still_scene.gt_flow, 0.0)
    np.testing.assert_array_equal(still_scene.source.depth, still_scene.target.depth)
    np.testing.assert_array_equal(still_scene.source.color, still_scene.target.color)


def test_fixed_translation_moves_every_valid_node():
    scene = generate_scene(2, SceneConfig(width=64, height=48, translation=(0.01, 0.0, 0.02)))
    valid = scene.gt_graph.valid
    np.testing.assert_allclose(scene.gt_flow[valid], np.tile([0.01, 0.0, 0.02], (valid.sum(), 1)))


def test_scene_config_validation():
    with pytest.raises(ValidationError):
        SceneConfig(bumps=10, bump_height=0.2)
    with pytest.raises(ValidationError):
        SceneConfig(texture_periods=(4.0,), texture_weights=(0.5, 0.5))
    assert SceneConfig(jump_level="J8").jump_level is JumpLevel.J8


def test_jump_level_parsing():
    assert JumpLevel.parse("j16") is JumpLevel.J16
    assert JumpLevel.parse(4) is JumpLevel.J4
    with pytest.raises(ConfigError):
        JumpLevel.parse(3)
    assert scene_dir_name(7, JumpLevel.J4) == "scene_s007_j04"


def test_export_and_load_round_trip(tmp_path, small_scene):
    directory = export_scene(small_scene, tmp_path / "scene", extra_meta={"note": "x"})
    meta = json.loads((directory / "meta.json").read_text())
    assert meta["note"] == "x"
    assert meta["seed"] == 0

    loaded = load_scene(directory)
    np.testing.assert_array_equal(loaded.gt_flow, small_scene.gt_flow)
    np.testing.assert_array_equal(loaded.source.color, small_scene.source.color)
    np.testing.assert_allclose(loaded.target.depth, small_scene.target.depth, atol=1e-3)
    assert loaded.jump_level is small_scene.jump_level
    assert loaded.config == small_scene.config


def test_gt_flow_file_errors(tmp_path):
    path = tmp_path / "gt_flow.json"
    with pytest.raises(IoError):
        load_gt_flow(path)
    path.write_text("not json")
    with pytest.raises(FormatError):
        load_gt_flow(path)
    path.write_text("[[1, 2], [3, 4]]")
    with pytest.raises(FormatError) as e:
        load_gt_flow(path)
    assert e.value.path == str(path)


def test_evaluate_against_itself_and_an_offset(small_scene):
    gt = small_scene.gt_flow
    assert evaluate(small_scene.gt_graph, gt).epe_mean == 0.0

    report = evaluate(gt + [0.003, 0.004, 0.0], gt)
    assert report.n_nodes == len(gt)
    assert report.epe_mean == pytest.approx(0.005)
    assert report.epe_median == pytest.approx(0.005)
    assert report.flow_loss_mean == pytest.approx(0.007)
    assert report.flow_loss == pytest.approx(0.007 * len(gt))

    mask = np.zeros(len(gt), dtype=bool)
    mask[:3] = True
    assert evaluate(gt + 1.0, gt, mask=mask).n_nodes == 3

    with pytest.raises(DimensionMismatch):
        evaluate(gt[:-1], gt)
    with pytest.raises(DimensionMismatch):
        evaluate(gt, gt, mask=mask[:-1])


def test_pcg_loss_is_l1():
    assert pcg_loss([1.0, -2.0], [0.5, 0.0]) == 2.5
    with pytest.raises(DimensionMismatch):
        pcg_loss([1.0], [1.0, 2.0])


def test_rigid_flow(intrinsics):
    depth = np.ones((intrinsics.height, intrinsics.width))
    depth[0, 0] = 0.0
    frame = make_frame(intrinsics, depth)
    np.testing.assert_allclose(rigid_flow(frame, np.eye(3), np.zeros(3)), 0.0)
    flow = rigid_flow(frame, np.eye(3), [0.1, 0.0, -0.2])
    np.testing.assert_allclose(flow[5, 5], [0.1, 0.0, -0.2])
    np.testing.assert_array_equal(flow[0, 0], 0.0)


def test_densify_constant_node_flow(small_scene):
    g = small_scene.gt_graph
    dense = densify_node_flow(g, np.tile([1.0, 2.0, 3.0], (g.n_nodes, 1)), 30, 40)
    np.testing.assert_allclose(dense, np.broadcast_to([1.0, 2.0, 3.0], (30, 40, 3)))
    with pytest.raises(DimensionMismatch):
        densify_node_flow(g, np.zeros((3, 3)), 30, 40)


def test_still_pair_is_fully_covisible(still_scene):
    flow = np.zeros((120, 160, 3))
    assert covisibility(still_scene.source, still_scene.target, flow) == 1.0
    verdict = filter_pair(still_scene.source, still_scene.target, flow)
    assert verdict.keep
    assert verdict.photo_error == pytest.approx(0.0, abs=1e-12)


def test_half_frame_shift_of_a_plane_is_half_covisible():
    K = Intrinsics.default_for(160, 120)
    plane = make_frame(K, 1.0)
    flow = np.zeros((120, 160, 3))
    # one metre away, a lateral shift of 80 / fx metres moves every pixel 80 columns
    flow[..., 0] = 80.0 / K.fx
    assert covisibility(plane, plane, flow) == pytest.approx(0.5, abs=0.02)


def test_pair_pushed_out_of_view_is_rejected(still_scene):
    flow = np.zeros((120, 160, 3))
    flow[..., 0] = 50.0
    verdict = filter_pair(still_scene.source, still_scene.target, flow)
    assert not verdict.keep
    assert verdict.covisibility == 0.0
    assert verdict.photo_error == float("inf")
    assert len(verdict.reasons) == 2


def test_generated_pair_passes_the_filter(small_scene):
    verdict = filter_pair(small_scene.source, small_scene.target, small_scene.pixel_flow())
    assert verdict.covisibility > 0.5
    assert verdict.to_json()["keep"] == verdict.keep


def test_frame_filter(intrinsics):
    assert filter_frame(make_frame(intrinsics, 1.0)).keep
    far = filter_frame(make_frame(intrinsics, 3.0))
    assert not far.keep
    assert far.max_depth == 3.0
    holes = filter_frame(make_frame(intrinsics, 0.0))
    assert holes.invalid_fraction == 1.0
    assert not holes.keep
