from typing import Dict, List, Optional

from opentelemetry import metrics
from opentelemetry.exporter.otlp.proto.grpc.metric_exporter import (
    OTLPMetricExporter as GRPCExporter,
)
from opentelemetry.exporter.otlp.proto.http.metric_exporter import (
    OTLPMetricExporter as HTTPExporter,
)
from opentelemetry.sdk.metrics import MeterProvider
from opentelemetry.sdk.metrics.export import (
    MetricExporter,
    MetricReader,
    PeriodicExportingMetricReader,
)
from opentelemetry.sdk.metrics.view import ExplicitBucketHistogramAggregation, View
from opentelemetry.sdk.resources import Resource

from warpgraph.engine.tracing.attributes import Meters
from warpgraph.engine.version import __version__

METER_NAME = "warpgraph.solver"

HISTOGRAM_BUCKETS = {
    Meters.PCG_ITERATIONS: [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024],
    Meters.PCG_DURATION: [0.0001, 0.0003, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1, 3, 10],
    Meters.GN_ENERGY_RATIO: [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 1, 1.1, 2],
}


class MetricsWrapper(object):
    """Owns the meter provider behind the solver histograms, once per process."""

    resource_attributes: dict = {}
    endpoint: str = None
    headers: Dict[str, str] = {}

    def __new__(
        cls,
        exporter: MetricExporter = None,
        reader: Optional[MetricReader] = None,
    ) -> "MetricsWrapper":
        if hasattr(cls, "instance"):
            return cls.instance
        obj = cls.instance = super(MetricsWrapper, cls).__new__(cls)
        if reader is None:
            if not (MetricsWrapper.endpoint or exporter):
                return obj
            exporter = exporter or init_metrics_exporter(MetricsWrapper.endpoint, MetricsWrapper.headers)
            reader = PeriodicExportingMetricReader(exporter)
        obj._provider = init_metrics_provider(reader, MetricsWrapper.resource_attributes)
        return obj

    @staticmethod
    def set_static_params(
        resource_attributes: dict,
        endpoint: str,
        headers: Dict[str, str],
    ) -> None:
        MetricsWrapper.resource_attributes = resource_attributes
        MetricsWrapper.endpoint = endpoint
        MetricsWrapper.headers = headers


def init_metrics_exporter(endpoint: str, headers: Dict[str, str]) -> MetricExporter:
    if "http" in endpoint.lower():
        return HTTPExporter(endpoint=f"{endpoint}/v1/metrics", headers=headers)
    return GRPCExporter(endpoint=endpoint, headers=headers)


def init_metrics_provider(reader: MetricReader, resource_attributes: dict = None) -> MeterProvider:
    provider = MeterProvider(
        metric_readers=[reader],
        resource=Resource.create(resource_attributes or {}),
        views=metric_views(),
    )
    metrics.set_meter_provider(provider)
    return provider


def metric_views() -> List[View]:
    return [
        View(instrument_name=name, aggregation=ExplicitBucketHistogramAggregation(buckets))
        for name, buckets in HISTOGRAM_BUCKETS.items()
    ]


class SolverInstruments:
    """Lazily created instruments on the global meter provider."""

    _instance = None

    def __init__(self):
        meter = metrics.get_meter(METER_NAME, __version__)
        self.pcg_iterations = meter.create_histogram(
            name=Meters.PCG_ITERATIONS,
            unit="1",
            description="PCG iterations per solve",
        )
        self.pcg_duration = meter.create_histogram(
            name=Meters.PCG_DURATION,
            unit="s",
            description="PCG wall time per solve",
        )
        self.gn_energy_ratio = meter.create_histogram(
            name=Meters.GN_ENERGY_RATIO,
            unit="1",
            description="Energy after / before one Gauss-Newton iteration",
        )

    @classmethod
    def get(cls) -> "SolverInstruments":
        if cls._instance is None:
            cls._instance = SolverInstruments()
        return cls._instance
