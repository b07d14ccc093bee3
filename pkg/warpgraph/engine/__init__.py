import os
import sys
from typing import Dict, Optional

from colorama import Fore
from opentelemetry.sdk.metrics.export import MetricExporter, MetricReader
from opentelemetry.sdk.resources import SERVICE_NAME
from opentelemetry.sdk.trace import SpanProcessor
from opentelemetry.sdk.trace.export import SpanExporter
from opentelemetry.util.re import parse_env_headers

from warpgraph.engine.config import (
    is_content_tracing_enabled,
    is_metrics_enabled,
    is_tracing_enabled,
)
from warpgraph.engine.metrics.metrics import MetricsWrapper
from warpgraph.engine.tracing.tracing import (
    TracerWrapper,
    clear_association_properties,
    set_association_properties,
    tracing_endpoint_from_env,
)
from warpgraph.engine.version import __version__


class Warpgraph:
    __tracer_wrapper: TracerWrapper = None
    __metrics_wrapper: MetricsWrapper = None

    @staticmethod
    def init(
        app_name: Optional[str] = sys.argv[0],
        api_endpoint: str = "",
        headers: Optional[Dict[str, str]] = None,
        disable_batch: bool = False,
        exporter: SpanExporter = None,
        processor: SpanProcessor = None,
        metrics_exporter: MetricExporter = None,
        metric_reader: MetricReader = None,
        resource_attributes: Optional[dict] = None,
    ) -> None:
        """Sets up span and metric export once per process.

        Without an endpoint, exporter or processor the decorators stay inert.
        """
        api_endpoint = tracing_endpoint_from_env(api_endpoint)
        if not is_tracing_enabled():
            print(Fore.YELLOW + "Tracing is disabled" + Fore.RESET)
            return
        if not (api_endpoint or exporter or processor):
            return

        headers = os.getenv("WARPGRAPH_HEADERS") or headers or {}
        if isinstance(headers, str):
            headers = parse_env_headers(headers)

        if exporter or processor:
            print(Fore.GREEN + "Warpgraph exporting traces to a custom exporter" + Fore.RESET)
        else:
            print(Fore.GREEN + f"Warpgraph exporting traces to {api_endpoint}" + Fore.RESET)

        resource_attributes = dict(resource_attributes or {})
        resource_attributes.update({SERVICE_NAME: app_name})
        TracerWrapper.set_static_params(
            resource_attributes, is_content_tracing_enabled(), api_endpoint, headers
        )
        Warpgraph.__tracer_wrapper = TracerWrapper(
            disable_batch=disable_batch, processor=processor, exporter=exporter
        )

        if not is_metrics_enabled():
            print(Fore.YELLOW + "Metrics are disabled" + Fore.RESET)
            return
        if exporter and not (metrics_exporter or metric_reader):
            return

        metrics_endpoint = os.getenv("WARPGRAPH_METRICS_ENDPOINT") or api_endpoint
        metrics_headers = os.getenv("WARPGRAPH_METRICS_HEADERS") or headers
        if isinstance(metrics_headers, str):
            metrics_headers = parse_env_headers(metrics_headers)
        MetricsWrapper.set_static_params(resource_attributes, metrics_endpoint, metrics_headers)
        Warpgraph.__metrics_wrapper = MetricsWrapper(
            exporter=metrics_exporter, reader=metric_reader
        )

    @staticmethod
    def set_association_properties(properties: dict) -> object:
        return set_association_properties(properties)

    @staticmethod
    def clear_association_properties(token: object) -> None:
        clear_association_properties(token)


__all__ = ["Warpgraph", "__version__"]
