"""Unit tests configuration module."""

import numpy as np
import pytest
from opentelemetry.sdk.metrics.export import InMemoryMetricReader
from opentelemetry.sdk.trace.export.in_memory_span_exporter import InMemorySpanExporter

from warpgraph.engine import Warpgraph
from warpgraph.engine.frames import Frame, Intrinsics
from warpgraph.engine.synth import SceneConfig, generate_scene

pytest_plugins = []


@pytest.fixture(scope="session")
def metric_reader():
    return InMemoryMetricReader()


@pytest.fixture(scope="session")
def exporter(metric_reader):
    exporter = InMemorySpanExporter()
    Warpgraph.init(
        app_name="test",
        resource_attributes={"something": "yes"},
        disable_batch=True,
        exporter=exporter,
        metric_reader=metric_reader,
    )
    return exporter


@pytest.fixture(autouse=True)
def clear_exporter(exporter):
    exporter.clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def intrinsics():
    return Intrinsics.default_for(64, 48)


def make_frame(K: Intrinsics, depth, color=None) -> Frame:
    depth = np.broadcast_to(np.asarray(depth, dtype=np.float64), (K.height, K.width))
    if color is None:
        u = np.arange(K.width)[None, :] * np.ones((K.height, 1))
        v = np.arange(K.height)[:, None] * np.ones((1, K.width))
        gray = 127 + 100 * np.sin(u / 5.0) * np.cos(v / 7.0)
        color = np.repeat(gray[:, :, None], 3, axis=2).astype(np.uint8)
    return Frame(color=color, depth=depth, intrinsics=K)


@pytest.fixture
def planar_frame(intrinsics):
    return make_frame(intrinsics, 1.0)


def random_spd(rng: np.random.Generator, n: int, spread: float = 1.0) -> np.ndarray:
    G = rng.standard_normal((n, n))
    return spread * G @ G.T / n + np.eye(n)


@pytest.fixture
def spd_system(rng):
    A = random_spd(rng, 24, spread=10.0)
    return A, rng.standard_normal(24)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(0, SceneConfig(width=160, height=120))


@pytest.fixture(scope="session")
def still_scene():
    return generate_scene(3, SceneConfig(width=160, height=120, magnitude=0.0))
