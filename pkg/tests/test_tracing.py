import json

import numpy as np

from warpgraph.engine import Warpgraph
from warpgraph.engine.decorators import task, workflow
from warpgraph.engine.solver import block_jacobi, pcg_solve
from warpgraph.engine.tracing.attributes import Meters, SpanAttributes
from warpgraph.engine.tracker import TrackerConfig, track


def test_nested_entities_are_chained(exporter):
    @workflow(name="outer")
    def outer():
        return inner()

    @task(name="inner")
    def inner():
        return leaf()

    @task(name="leaf")
    def leaf():
        return 3

    assert outer() == 3
    spans = exporter.get_finished_spans()
    assert [span.name for span in spans] == ["leaf.task", "inner.task", "outer.workflow"]
    leaf_span, inner_span, outer_span = spans
    assert leaf_span.attributes[SpanAttributes.WARPGRAPH_ENTITY_NAME] == "inner.leaf"
    assert leaf_span.attributes[SpanAttributes.WARPGRAPH_WORKFLOW_NAME] == "outer"
    assert leaf_span.parent.span_id == inner_span.context.span_id
    assert json.loads(leaf_span.attributes[SpanAttributes.WARPGRAPH_ENTITY_OUTPUT]) == 3


def test_resource_attributes(exporter):
    @workflow()
    def run_workflow():
        pass

    run_workflow()
    span = exporter.get_finished_spans()[0]
    assert span.resource.attributes["something"] == "yes"
    assert span.resource.attributes["service.name"] == "test"


def test_association_properties(exporter):
    @workflow(name="tagged")
    def tagged():
        return tagged_step()

    @task(name="tagged_step")
    def tagged_step():
        return

    token = Warpgraph.set_association_properties({"seed": 7, "jump_level": 4})
    try:
        tagged()
    finally:
        Warpgraph.clear_association_properties(token)
    prefix = SpanAttributes.WARPGRAPH_ASSOCIATION_PROPERTIES
    for span in exporter.get_finished_spans():
        assert span.attributes[f"{prefix}.seed"] == 7
        assert span.attributes[f"{prefix}.jump_level"] == 4

    exporter.clear()
    tagged()
    for span in exporter.get_finished_spans():
        assert f"{prefix}.seed" not in span.attributes


def test_array_inputs_are_summarized(exporter):
    @task(name="takes_array")
    def takes_array(values):
        return values.sum()

    takes_array(np.zeros((4, 3)))
    span = exporter.get_finished_spans()[0]
    payload = json.loads(span.attributes[SpanAttributes.WARPGRAPH_ENTITY_INPUT])
    assert payload["args"] == [{"shape": [4, 3], "dtype": "float64"}]


def test_failures_mark_the_span(exporter):
    @task(name="explodes")
    def explodes():
        raise RuntimeError("boom")

    try:
        explodes()
    except RuntimeError:
        pass
    span = exporter.get_finished_spans()[0]
    assert not span.status.is_ok
    assert span.events[0].name == "exception"


def test_pcg_solve_reports_on_its_span(exporter, spd_system):
    A, b = spd_system
    _, report = pcg_solve(A, b, block_jacobi(A))
    span = [s for s in exporter.get_finished_spans() if s.name == "pcg_solve.task"][0]
    assert span.attributes[SpanAttributes.PCG_ITERATIONS] == report.iterations
    assert span.attributes[SpanAttributes.PCG_PRECONDITIONER] == "block_jacobi"
    assert span.attributes[SpanAttributes.PCG_CONVERGED]


def test_tracking_span_tree(exporter, still_scene):
    track(still_scene.source, still_scene.target, cfg=TrackerConfig(gn_iters=2))
    names = [span.name for span in exporter.get_finished_spans()]
    assert names[-1] == "track.workflow"
    assert names.count("gauss_newton_step.task") == 2
    assert names.count("pcg_solve.task") == 2
    step = [s for s in exporter.get_finished_spans() if s.name == "gauss_newton_step.task"][-1]
    assert step.attributes[SpanAttributes.GN_ITERATION] == 1


def test_solver_metrics_are_recorded(metric_reader, spd_system):
    A, b = spd_system
    pcg_solve(A, b)
    names = set()
    for resource_metrics in metric_reader.get_metrics_data().resource_metrics:
        for scope_metrics in resource_metrics.scope_metrics:
            names.update(metric.name for metric in scope_metrics.metrics)
    assert {Meters.PCG_ITERATIONS, Meters.PCG_DURATION} <= names
