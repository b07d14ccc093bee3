from enum import Enum


class SpanAttributes:
    WARPGRAPH_SPAN_KIND = "warpgraph.span.kind"
    WARPGRAPH_WORKFLOW_NAME = "warpgraph.workflow.name"
    WARPGRAPH_ENTITY_NAME = "warpgraph.entity.name"
    WARPGRAPH_ENTITY_VERSION = "warpgraph.entity.version"
    WARPGRAPH_ENTITY_INPUT = "warpgraph.entity.input"
    WARPGRAPH_ENTITY_OUTPUT = "warpgraph.entity.output"
    WARPGRAPH_ASSOCIATION_PROPERTIES = "warpgraph.association.properties"

    PCG_ITERATIONS = "warpgraph.pcg.iterations"
    PCG_CONVERGED = "warpgraph.pcg.converged"
    PCG_FINAL_RESIDUAL = "warpgraph.pcg.final_residual"
    PCG_PRECONDITIONER = "warpgraph.pcg.preconditioner"
    GN_ITERATION = "warpgraph.gn.iteration"
    GN_ENERGY = "warpgraph.gn.energy"
    CONDITION_KAPPA = "warpgraph.condition.kappa"


class Meters:
    PCG_ITERATIONS = "warpgraph.pcg.iterations"
    PCG_DURATION = "warpgraph.pcg.duration"
    GN_ENERGY_RATIO = "warpgraph.gn.energy_ratio"


class WarpgraphSpanKindValues(Enum):
    WORKFLOW = "workflow"
    TASK = "task"
