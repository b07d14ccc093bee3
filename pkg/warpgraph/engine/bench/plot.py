"""SVG chart of mean PCG residual against iteration, one line per preconditioner."""

import math
from pathlib import Path
from typing import Union

import pandas as pd
from jinja2 import Environment

from warpgraph.engine.errors import IoError

WIDTH, HEIGHT = 640, 400
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 170, 30, 50
RESIDUAL_FLOOR = 1e-16
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

SVG_TEMPLATE = """<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{{ width }}" height="{{ height }}" viewBox="0 0 {{ width }} {{ height }}" font-family="sans-serif" font-size="12">
  <rect x="0" y="0" width="{{ width }}" height="{{ height }}" fill="white"/>
  <line x1="{{ left }}" y1="{{ bottom }}" x2="{{ right }}" y2="{{ bottom }}" stroke="black"/>
  <line x1="{{ left }}" y1="{{ top }}" x2="{{ left }}" y2="{{ bottom }}" stroke="black"/>
{%- for tick in y_ticks %}
  <line x1="{{ left - 4 }}" y1="{{ tick.y }}" x2="{{ right }}" y2="{{ tick.y }}" stroke="#dddddd"/>
  <text x="{{ left - 8 }}" y="{{ tick.y + 4 }}" text-anchor="end">1e{{ tick.exponent }}</text>
{%- endfor %}
{%- for tick in x_ticks %}
  <text x="{{ tick.x }}" y="{{ bottom + 18 }}" text-anchor="middle">{{ tick.label }}</text>
{%- endfor %}
  <text x="{{ (left + right) / 2 }}" y="{{ height - 10 }}" text-anchor="middle">PCG iteration</text>
  <text x="16" y="{{ (top + bottom) / 2 }}" text-anchor="middle" transform="rotate(-90 16 {{ (top + bottom) / 2 }})">mean residual (log10)</text>
{%- for series in lines %}
  <polyline fill="none" stroke="{{ series.color }}" stroke-width="2" points="{{ series.points }}"/>
  <line x1="{{ right + 15 }}" y1="{{ top + 20 * loop.index }}" x2="{{ right + 35 }}" y2="{{ top + 20 * loop.index }}" stroke="{{ series.color }}" stroke-width="2"/>
  <text x="{{ right + 40 }}" y="{{ top + 20 * loop.index + 4 }}">{{ series.kind }}</text>
{%- endfor %}
</svg>
"""

_env = Environment(autoescape=True)


def _x_ticks(max_iter: int, scale) -> list:
    step = max(1, math.ceil(max_iter / 10))
    return [{"x": round(scale(k), 2), "label": k} for k in range(0, max_iter + 1, step)]


def render_curves_svg(curves: pd.DataFrame) -> str:
    """Renders the ``curves`` frame of a benchmark report (kind, iteration, mean_residual)."""
    left, right = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
    top, bottom = MARGIN_TOP, HEIGHT - MARGIN_BOTTOM
    logs = curves["mean_residual"].clip(lower=RESIDUAL_FLOOR).map(math.log10) if len(curves) else pd.Series([0.0])
    lo, hi = math.floor(logs.min()), math.ceil(logs.max())
    if hi == lo:
        hi = lo + 1
    max_iter = int(curves["iteration"].max()) if len(curves) else 1
    max_iter = max(max_iter, 1)

    def sx(k):
        return left + (right - left) * k / max_iter

    def sy(value):
        return bottom - (bottom - top) * (value - lo) / (hi - lo)

    lines = []
    for index, (kind, group) in enumerate(curves.groupby("kind", sort=False)):
        group = group.sort_values("iteration")
        points = " ".join(
            f"{sx(k):.2f},{sy(math.log10(max(r, RESIDUAL_FLOOR))):.2f}"
            for k, r in zip(group["iteration"], group["mean_residual"])
        )
        lines.append({"kind": kind, "color": PALETTE[index % len(PALETTE)], "points": points})

    return _env.from_string(SVG_TEMPLATE).render(
        width=WIDTH,
        height=HEIGHT,
        left=left,
        right=right,
        top=top,
        bottom=bottom,
        y_ticks=[{"y": round(sy(e), 2), "exponent": e} for e in range(lo, hi + 1)],
        x_ticks=_x_ticks(max_iter, sx),
        lines=lines,
    )


def write_curves_svg(curves: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.write_text(render_curves_svg(curves))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}", path=str(path)) from e
    return path
