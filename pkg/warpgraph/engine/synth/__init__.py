from warpgraph.engine.synth.metrics import (
    EvalReport,
    FrameFilterResult,
    PairFilterResult,
    covisibility,
    densify_node_flow,
    evaluate,
    filter_frame,
    filter_pair,
    pcg_loss,
    photo_consistency_error,
    rigid_flow,
)
from warpgraph.engine.synth.scene import (
    JumpLevel,
    SceneConfig,
    SyntheticScene,
    export_scene,
    generate_scene,
    load_gt_flow,
    load_scene,
    save_gt_flow,
    scene_dir_name,
)
