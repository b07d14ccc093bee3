from warpgraph.engine.tracker.export import export_result, telemetry_dict
from warpgraph.engine.tracker.gauss_newton import (
    features_from_intensity,
    refine_with_depth,
    track,
)
from warpgraph.engine.tracker.models import (
    FeatureSource,
    PreconditionerConfig,
    TrackerConfig,
    TrackingResult,
)
