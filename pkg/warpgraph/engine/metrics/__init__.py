from warpgraph.engine.metrics.metrics import MetricsWrapper, SolverInstruments
