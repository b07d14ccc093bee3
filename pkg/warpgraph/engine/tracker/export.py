import json
from pathlib import Path
from typing import Optional, Union

from warpgraph.engine.graph import save_graph_json
from warpgraph.engine.tracker.models import TrackingResult
from warpgraph.engine.utils.json_encoder import JSONEncoder


def telemetry_dict(result: TrackingResult, include_timings: bool = True) -> dict:
    iterations = []
    for k, report in enumerate(result.solve_reports):
        entry = {
            "iteration": k,
            "pcg_iterations": report.iterations,
            "converged": report.converged,
            "preconditioner": report.preconditioner,
            "residual_history": report.residual_history,
        }
        if k < len(result.step_sizes):
            entry["step"] = result.step_sizes[k]
        if include_timings:
            entry["wall_time"] = report.wall_time
            entry["precond_setup_time"] = report.precond_setup_time
        iterations.append(entry)
    payload = {
        "energy_history": result.energy_history,
        "energy_breakdown": result.energy_breakdown,
        "iterations": iterations,
        "dumped_systems": [Path(p).name for p in result.dumped_systems],
    }
    if include_timings:
        payload["wall_time"] = result.wall_time
    return payload


def export_result(
    result: TrackingResult,
    directory: Union[str, Path],
    evaluation: Optional[dict] = None,
    include_timings: bool = True,
) -> Path:
    """Writes graph.json and telemetry.json into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_graph_json(result.graph, directory / "graph.json")
    telemetry = telemetry_dict(result, include_timings)
    if evaluation is not None:
        telemetry["evaluation"] = evaluation
    (directory / "telemetry.json").write_text(
        json.dumps(telemetry, indent=2, cls=JSONEncoder)
    )
    return directory
