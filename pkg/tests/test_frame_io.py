import json

import numpy as np
import pytest

from tests.conftest import make_frame
from warpgraph.engine.errors import DimensionMismatch, FormatError, IoError
from warpgraph.engine.frames import (
    FeatureMap,
    Frame,
    load_feature_map,
    load_frame_dir,
    load_intrinsics,
    save_feature_map,
    save_frame_dir,
    save_intrinsics,
)


def test_frame_dir_round_trip(tmp_path, intrinsics):
    depth = np.full((intrinsics.height, intrinsics.width), 1.234)
    depth[0, :5] = 0.0
    frame = make_frame(intrinsics, depth)
    save_frame_dir(frame, tmp_path / "f")

    loaded = load_frame_dir(tmp_path / "f")
    np.testing.assert_array_equal(loaded.color, frame.color)
    np.testing.assert_allclose(loaded.depth, frame.depth, atol=1e-12)
    assert loaded.intrinsics == intrinsics
    assert not loaded.valid_depth[0, :5].any()


def test_missing_depth_names_the_path(tmp_path, planar_frame):
    save_frame_dir(planar_frame, tmp_path / "f")
    (tmp_path / "f" / "depth.png").unlink()
    with pytest.raises(IoError) as info:
        load_frame_dir(tmp_path / "f")
    assert info.value.path.endswith("depth.png")


def test_intrinsics_round_trip_and_validation(tmp_path, intrinsics):
    save_intrinsics(intrinsics, tmp_path / "K.json")
    assert load_intrinsics(tmp_path / "K.json") == intrinsics

    payload = intrinsics.model_dump()
    payload["fx"] = 0
    (tmp_path / "bad.json").write_text(json.dumps(payload))
    with pytest.raises(FormatError):
        load_intrinsics(tmp_path / "bad.json")


def test_frame_rejects_mismatched_depth(intrinsics):
    color = np.zeros((intrinsics.height, intrinsics.width, 3), dtype=np.uint8)
    with pytest.raises(DimensionMismatch):
        Frame(color=color, depth=np.ones((10, 10)), intrinsics=intrinsics)


def test_feature_map_round_trip(tmp_path, rng):
    fmap = FeatureMap(rng.standard_normal((12, 16, 4)).astype(np.float32))
    save_feature_map(fmap, tmp_path / "f.nrfm")
    loaded = load_feature_map(tmp_path / "f.nrfm")
    assert (loaded.h, loaded.w, loaded.c) == (12, 16, 4)
    np.testing.assert_array_equal(loaded.data, fmap.data)


def test_feature_map_bad_magic(tmp_path, rng):
    fmap = FeatureMap(rng.standard_normal((2, 3, 1)).astype(np.float32))
    save_feature_map(fmap, tmp_path / "f.nrfm")
    raw = bytearray((tmp_path / "f.nrfm").read_bytes())
    raw[:4] = b"XXXX"
    (tmp_path / "f.nrfm").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_feature_map(tmp_path / "f.nrfm")


def test_feature_map_truncated_payload(tmp_path, rng):
    fmap = FeatureMap(rng.standard_normal((2, 3, 1)).astype(np.float32))
    save_feature_map(fmap, tmp_path / "f.nrfm")
    raw = (tmp_path / "f.nrfm").read_bytes()
    (tmp_path / "f.nrfm").write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        load_feature_map(tmp_path / "f.nrfm")


def test_intensity_is_luma(intrinsics):
    color = np.zeros((intrinsics.height, intrinsics.width, 3), dtype=np.uint8)
    color[..., 1] = 255
    frame = Frame(color=color, depth=np.ones((intrinsics.height, intrinsics.width)), intrinsics=intrinsics)
    np.testing.assert_allclose(frame.intensity(), 0.587)
