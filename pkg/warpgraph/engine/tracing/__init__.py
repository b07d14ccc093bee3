from warpgraph.engine.tracing.tracing import get_tracer, set_workflow_name, set_span_attributes
