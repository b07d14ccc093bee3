import os


def is_tracing_enabled() -> bool:
    return (os.getenv("WARPGRAPH_TRACING_ENABLED") or "true").lower() == "true"


def is_content_tracing_enabled() -> bool:
    return (os.getenv("WARPGRAPH_TRACE_CONTENT") or "true").lower() == "true"


def is_metrics_enabled() -> bool:
    return (os.getenv("WARPGRAPH_METRICS_ENABLED") or "true").lower() == "true"


def is_warnings_suppressed() -> bool:
    return (os.getenv("WARPGRAPH_SUPPRESS_WARNINGS") or "false").lower() == "true"


def default_thread_count() -> int:
    try:
        return max(1, int(os.getenv("WARPGRAPH_THREADS") or "1"))
    except ValueError:
        return 1
