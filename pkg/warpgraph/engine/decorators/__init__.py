from typing import Optional

from warpgraph.engine.decorators.base import entity_method
from warpgraph.engine.tracing.attributes import WarpgraphSpanKindValues


def task(
    name: Optional[str] = None,
    version: Optional[int] = None,
):
    return entity_method(
        name=name, version=version, span_kind=WarpgraphSpanKindValues.TASK
    )


def workflow(
    name: Optional[str] = None,
    version: Optional[int] = None,
):
    return entity_method(
        name=name, version=version, span_kind=WarpgraphSpanKindValues.WORKFLOW
    )
