import json
import logging
from functools import wraps
from typing import Any, Optional

from opentelemetry import context as context_api
from opentelemetry import trace

from warpgraph.engine.config import is_content_tracing_enabled
from warpgraph.engine.tracing import get_tracer, set_workflow_name
from warpgraph.engine.tracing.attributes import SpanAttributes, WarpgraphSpanKindValues
from warpgraph.engine.tracing.tracing import (
    TracerWrapper,
    get_chained_entity_name,
    set_entity_name,
)
from warpgraph.engine.utils.json_encoder import JSONEncoder


def entity_method(
    name: Optional[str] = None,
    version: Optional[int] = None,
    span_kind: Optional[WarpgraphSpanKindValues] = WarpgraphSpanKindValues.TASK,
):
    """Runs the wrapped function inside a "<name>.<kind>" span.

    A task nested in another task reports the chained entity name
    ("gauss_newton_step.pcg_solve"). A workflow names the workflow that every
    span below it reports.
    """

    def decorate(fn):
        @wraps(fn)
        def wrap(*args, **kwargs):
            if not TracerWrapper.verify_initialized():
                return fn(*args, **kwargs)

            entity_name = name or fn.__name__
            span_name = f"{entity_name}.{span_kind.value}"
            if span_kind == WarpgraphSpanKindValues.WORKFLOW:
                set_workflow_name(entity_name)

            with get_tracer() as tracer:
                span = tracer.start_span(span_name)
                token = context_api.attach(trace.set_span_in_context(span))
                try:
                    _label(span, entity_name, span_kind, version)
                    _record_content(
                        span,
                        SpanAttributes.WARPGRAPH_ENTITY_INPUT,
                        {"args": args, "kwargs": kwargs},
                    )
                    try:
                        result = fn(*args, **kwargs)
                    except Exception as e:
                        span.record_exception(e)
                        span.set_status(trace.Status(trace.StatusCode.ERROR, str(e)))
                        raise
                    _record_content(span, SpanAttributes.WARPGRAPH_ENTITY_OUTPUT, result)
                    return result
                finally:
                    span.end()
                    context_api.detach(token)

        return wrap

    return decorate


def _label(span, entity_name: str, span_kind: WarpgraphSpanKindValues, version: Optional[int]):
    if span_kind == WarpgraphSpanKindValues.TASK:
        entity_name = get_chained_entity_name(entity_name)
        set_entity_name(entity_name)
    span.set_attribute(SpanAttributes.WARPGRAPH_SPAN_KIND, span_kind.value)
    span.set_attribute(SpanAttributes.WARPGRAPH_ENTITY_NAME, entity_name)
    if version:
        span.set_attribute(SpanAttributes.WARPGRAPH_ENTITY_VERSION, version)


def _record_content(span, attribute: str, payload: Any):
    if not _should_send_content():
        return
    try:
        span.set_attribute(attribute, json.dumps(payload, cls=JSONEncoder))
    except (TypeError, ValueError) as e:
        logging.debug(f"Could not encode {attribute} of {span.name}: {e}")


def _should_send_content():
    return is_content_tracing_enabled() or context_api.get_value(
        "override_enable_content_tracing"
    )
