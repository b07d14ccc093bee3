from warpgraph.engine.graph.deform_graph import (
    DOF_PER_NODE,
    NEIGHBOR_OFFSETS,
    DeformGraph,
    GraphConfig,
    GridLattice,
    apply_increment,
    build_graph,
    fit_local_rotations,
    load_graph_json,
    pack_state,
    save_graph_json,
)
from warpgraph.engine.graph.rotations import skew, so3_exp
