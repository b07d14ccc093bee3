from warpgraph.engine.energy.assembly import (
    ResidualBlock,
    ResidualTerm,
    Weights,
    assemble_system,
    energy_breakdown,
    total_energy,
)
from warpgraph.engine.energy.sampling import bilinear_many, sample_bilinear
from warpgraph.engine.energy.terms import (
    arap_residuals,
    feature_residuals,
    geometric_residuals,
    residual_blocks,
)
