from warpgraph.engine.frames.camera import (
    Intrinsics,
    back_project,
    project,
    warp_pixel,
)
from warpgraph.engine.frames.models import FeatureMap, Frame
from warpgraph.engine.frames.io import (
    load_feature_map,
    load_frame,
    load_frame_dir,
    load_intrinsics,
    save_feature_map,
    save_frame_dir,
    save_intrinsics,
)
