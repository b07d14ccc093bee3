import json
import struct
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image
from pydantic import ValidationError

from warpgraph.engine.errors import FormatError, IoError
from warpgraph.engine.frames.camera import Intrinsics
from warpgraph.engine.frames.models import FeatureMap, Frame

PathLike = Union[str, Path]

NRFM_MAGIC = b"NRFM"
_NRFM_HEADER = struct.Struct("<4sIII")

COLOR_FILE = "color.png"
DEPTH_FILE = "depth.png"
INTRINSICS_FILE = "intrinsics.json"


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e.strerror or e}", path=str(path)) from e


def _open_image(path: PathLike) -> Image.Image:
    if not Path(path).is_file():
        raise IoError(f"no such file: {path}", path=str(path))
    try:
        image = Image.open(path)
        image.load()
    except OSError as e:
        raise FormatError(f"not a readable image: {path}", path=str(path)) from e
    return image


def load_intrinsics(path: PathLike) -> Intrinsics:
    try:
        payload = json.loads(_read_bytes(path).decode("utf-8"))
        return Intrinsics(**payload)
    except (json.JSONDecodeError, UnicodeDecodeError, TypeError) as e:
        raise FormatError(f"malformed intrinsics JSON {path}: {e}", path=str(path)) from e
    except ValidationError as e:
        raise FormatError(f"invalid intrinsics in {path}: {e}", path=str(path)) from e


def save_intrinsics(K: Intrinsics, path: PathLike) -> None:
    Path(path).write_text(json.dumps(K.model_dump(), indent=2, sort_keys=True))


def load_color(path: PathLike) -> np.ndarray:
    image = _open_image(path)
    if image.mode != "RGB":
        if image.mode not in ("RGBA", "L", "P"):
            raise FormatError(f"unsupported color mode {image.mode}", path=str(path))
        image = image.convert("RGB")
    return np.array(image, dtype=np.uint8)


def load_depth_units(path: PathLike) -> np.ndarray:
    image = _open_image(path)
    raw = np.array(image)
    if raw.ndim != 2 or not np.issubdtype(raw.dtype, np.integer):
        raise FormatError(
            f"depth must be single-channel 16-bit, got mode {image.mode}", path=str(path)
        )
    if raw.min(initial=0) < 0 or raw.max(initial=0) > 0xFFFF:
        raise FormatError("depth values outside 16-bit range", path=str(path))
    return raw.astype(np.uint16)


def load_frame(
    color_path: PathLike,
    depth_path: PathLike,
    intrinsics_path: PathLike,
    frame_id: str = "",
) -> Frame:
    K = load_intrinsics(intrinsics_path)
    color = load_color(color_path)
    units = load_depth_units(depth_path)
    expected = (K.height, K.width)
    if color.shape[:2] != expected:
        raise FormatError(
            f"color is {color.shape[1]}x{color.shape[0]}, intrinsics say "
            f"{K.width}x{K.height}",
            path=str(color_path),
        )
    if units.shape != expected:
        raise FormatError(
            f"depth is {units.shape[1]}x{units.shape[0]}, intrinsics say "
            f"{K.width}x{K.height}",
            path=str(depth_path),
        )
    depth = units.astype(np.float64) * K.depth_scale
    return Frame(color=color, depth=depth, intrinsics=K, id=frame_id or str(color_path))


def load_frame_dir(directory: PathLike, frame_id: str = "") -> Frame:
    directory = Path(directory)
    return load_frame(
        directory / COLOR_FILE,
        directory / DEPTH_FILE,
        directory / INTRINSICS_FILE,
        frame_id=frame_id or directory.name,
    )


def quantize_depth(depth: np.ndarray, depth_scale: float) -> np.ndarray:
    units = np.rint(np.asarray(depth, dtype=np.float64) / depth_scale)
    if units.max(initial=0) > 0xFFFF:
        raise FormatError("depth exceeds the 16-bit range for this depth_scale")
    return units.astype(np.uint16)


def save_frame_dir(frame: Frame, directory: PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(frame.color)).save(
        directory / COLOR_FILE
    )
    units = quantize_depth(frame.depth, frame.intrinsics.depth_scale)
    Image.fromarray(units).save(directory / DEPTH_FILE)
    save_intrinsics(frame.intrinsics, directory / INTRINSICS_FILE)
    return directory


def load_feature_map(path: PathLike) -> FeatureMap:
    blob = _read_bytes(path)
    if len(blob) < _NRFM_HEADER.size:
        raise FormatError(f"truncated feature map header in {path}", path=str(path))
    magic, w, h, c = _NRFM_HEADER.unpack_from(blob)
    if magic != NRFM_MAGIC:
        raise FormatError(f"bad magic {magic!r} in {path}", path=str(path))
    count = w * h * c
    payload = len(blob) - _NRFM_HEADER.size
    if count == 0 or payload != 4 * count:
        raise FormatError(
            f"header says {w}x{h}x{c} floats, payload holds {payload} bytes",
            path=str(path),
        )
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=_NRFM_HEADER.size)
    return FeatureMap(values.reshape(h, w, c).astype(np.float32))


def save_feature_map(feature_map: FeatureMap, path: PathLike) -> None:
    data = np.ascontiguousarray(feature_map.data, dtype="<f4")
    header = _NRFM_HEADER.pack(NRFM_MAGIC, feature_map.w, feature_map.h, feature_map.c)
    Path(path).write_bytes(header + data.tobytes())
