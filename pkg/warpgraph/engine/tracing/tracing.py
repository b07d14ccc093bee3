import atexit
import logging
import os
from contextlib import contextmanager
from typing import Dict, Optional

from colorama import Fore
from opentelemetry import trace
from opentelemetry.context import attach, detach, get_value, set_value
from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import (
    OTLPSpanExporter as GRPCExporter,
)
from opentelemetry.exporter.otlp.proto.http.trace_exporter import (
    OTLPSpanExporter as HTTPExporter,
)
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import SpanProcessor, TracerProvider
from opentelemetry.sdk.trace.export import (
    BatchSpanProcessor,
    SimpleSpanProcessor,
    SpanExporter,
)
from opentelemetry.trace import ProxyTracerProvider, get_tracer_provider

from warpgraph.engine.config import is_warnings_suppressed
from warpgraph.engine.tracing.attributes import SpanAttributes

TRACER_NAME = "warpgraph.tracer"

# context keys shared by the decorators and the span processor hook
WORKFLOW_KEY = "workflow_name"
ENTITY_KEY = "entity_name"
ASSOCIATION_KEY = "association_properties"


class TracerWrapper(object):
    """Process-wide span pipeline; stays uninitialized until Warpgraph.init() configures it."""

    resource_attributes: dict = {}
    enable_content_tracing: bool = True
    endpoint: str = None
    headers: Dict[str, str] = {}
    __warned: bool = False

    def __new__(
        cls,
        disable_batch=False,
        processor: SpanProcessor = None,
        exporter: SpanExporter = None,
    ) -> "TracerWrapper":
        if hasattr(cls, "instance"):
            return cls.instance
        if not (TracerWrapper.endpoint or exporter or processor):
            return super(TracerWrapper, cls).__new__(cls)

        obj = cls.instance = super(TracerWrapper, cls).__new__(cls)
        obj._provider = init_tracer_provider(Resource(attributes=TracerWrapper.resource_attributes))
        obj._processor, obj._chained_on_start = _span_processor(processor, exporter, disable_batch)
        obj._processor.on_start = obj._on_start
        obj._provider.add_span_processor(obj._processor)
        # CLI runs are short; whatever is still batched goes out at exit
        atexit.register(obj.flush)
        return obj

    def _on_start(self, span, parent_context):
        workflow_name = get_value(WORKFLOW_KEY)
        if workflow_name is not None:
            span.set_attribute(SpanAttributes.WARPGRAPH_WORKFLOW_NAME, workflow_name)
        entity_name = get_value(ENTITY_KEY)
        if entity_name is not None:
            span.set_attribute(SpanAttributes.WARPGRAPH_ENTITY_NAME, entity_name)
        properties = get_value(ASSOCIATION_KEY)
        if properties is not None:
            _set_association_properties_attributes(span, properties)
        if self._chained_on_start:
            self._chained_on_start(span, parent_context)

    @staticmethod
    def set_static_params(
        resource_attributes: dict,
        enable_content_tracing: bool,
        endpoint: str,
        headers: Dict[str, str],
    ) -> None:
        TracerWrapper.resource_attributes = resource_attributes
        TracerWrapper.enable_content_tracing = enable_content_tracing
        TracerWrapper.endpoint = endpoint
        TracerWrapper.headers = headers

    @classmethod
    def verify_initialized(cls) -> bool:
        if hasattr(cls, "instance"):
            return True
        # numerical kernels call decorated functions in tight loops, say it once
        if not (is_warnings_suppressed() or TracerWrapper.__warned):
            TracerWrapper.__warned = True
            logging.debug(
                Fore.YELLOW
                + "Warpgraph tracing not initialized, call Warpgraph.init() to emit spans"
                + Fore.RESET
            )
        return False

    def flush(self):
        self._processor.force_flush()

    def get_tracer(self):
        return self._provider.get_tracer(TRACER_NAME)


def _span_processor(
    processor: Optional[SpanProcessor], exporter: Optional[SpanExporter], disable_batch: bool
):
    """Returns the processor to install and the on_start hook it came with, if custom."""
    if processor is not None:
        return processor, processor.on_start
    exporter = exporter or init_spans_exporter(TracerWrapper.endpoint, TracerWrapper.headers)
    if disable_batch:
        return SimpleSpanProcessor(exporter), None
    return BatchSpanProcessor(exporter), None


@contextmanager
def get_tracer():
    yield TracerWrapper().get_tracer()


def set_association_properties(properties: dict) -> object:
    """Tags the current span and every span started below it, e.g. with a scene seed.

    Returns the context token that clear_association_properties takes.
    """
    token = attach(set_value(ASSOCIATION_KEY, properties))
    if get_value(WORKFLOW_KEY) is not None or get_value(ENTITY_KEY) is not None:
        _set_association_properties_attributes(trace.get_current_span(), properties)
    return token


def clear_association_properties(token: object) -> None:
    detach(token)


def _set_association_properties_attributes(span, properties: dict) -> None:
    for key, value in properties.items():
        span.set_attribute(f"{SpanAttributes.WARPGRAPH_ASSOCIATION_PROPERTIES}.{key}", value)


def set_workflow_name(workflow_name: str) -> None:
    attach(set_value(WORKFLOW_KEY, workflow_name))


def set_entity_name(entity_name: str) -> None:
    attach(set_value(ENTITY_KEY, entity_name))


def get_chained_entity_name(entity_name: str) -> str:
    parent = get_value(ENTITY_KEY)
    return entity_name if parent is None else f"{parent}.{entity_name}"


def set_span_attributes(attributes: dict) -> None:
    """Sets solver attributes on the active span, if any is recording."""
    span = trace.get_current_span()
    if not span.is_recording():
        return
    for key, value in attributes.items():
        span.set_attribute(key, value)


def init_spans_exporter(api_endpoint: str, headers: Dict[str, str]) -> SpanExporter:
    if "http" in api_endpoint.lower():
        return HTTPExporter(endpoint=f"{api_endpoint}/v1/traces", headers=headers)
    return GRPCExporter(endpoint=api_endpoint, headers=headers)


def init_tracer_provider(resource: Resource) -> TracerProvider:
    """Installs a provider unless the application already set an SDK one."""
    current = get_tracer_provider()
    if isinstance(current, ProxyTracerProvider):
        provider = TracerProvider(resource=resource)
        trace.set_tracer_provider(provider)
        return provider
    if not hasattr(current, "add_span_processor"):
        logging.error("The installed tracer provider cannot take span processors")
        return None
    return current


def tracing_endpoint_from_env(default: str = "") -> str:
    return os.getenv("WARPGRAPH_BASE_URL") or default
