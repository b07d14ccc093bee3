import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from warpgraph.engine.energy import Weights
from warpgraph.engine.errors import ConfigError, IoError
from warpgraph.engine.graph import DeformGraph, GraphConfig
from warpgraph.engine.solver import PreconditionerKind, SolveReport


class FeatureSource(str, Enum):
    LOADED_NRFM = "loaded_nrfm"
    INTENSITY = "intensity"


class PreconditionerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: PreconditionerKind = PreconditionerKind.BLOCK_JACOBI
    factor_path: Optional[str] = None

    @model_validator(mode="after")
    def _factor_for_loaded(self) -> "PreconditionerConfig":
        loaded = self.kind.value.startswith("loaded_")
        if loaded and not self.factor_path:
            raise ValueError(f"{self.kind.value} needs factor_path")
        return self


class TrackerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    gn_iters: int = Field(default=3, ge=1)
    pcg_iters: int = Field(default=10, ge=1)
    pcg_tol: float = Field(default=1e-6, gt=0)
    refine_iters: int = Field(default=3, ge=1)
    weights: Weights = Weights()
    graph: GraphConfig = GraphConfig()
    preconditioner: PreconditionerConfig = PreconditionerConfig()
    feature_source: FeatureSource = FeatureSource.INTENSITY
    dump_systems: bool = False
    run_id: str = "track"

    @classmethod
    def from_file(cls, path: Union[str, Path, None] = None, **overrides) -> "TrackerConfig":
        """Loads a JSON config; keyword overrides (None values ignored) win over the file."""
        payload = {}
        if path is not None:
            try:
                payload = json.loads(Path(path).read_text())
            except OSError as e:
                raise IoError(f"cannot read config {path}", path=str(path)) from e
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path} is not JSON: {e}") from e
        payload.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls.model_validate(payload)
        except ValidationError as e:
            raise ConfigError(str(e)) from e

    def with_updates(self, **changes) -> "TrackerConfig":
        try:
            return TrackerConfig.model_validate({**self.model_dump(), **changes})
        except ValidationError as e:
            raise ConfigError(str(e)) from e


@dataclass
class TrackingResult:
    """``energy_history`` holds the energy before the first and after every accepted step."""

    graph: DeformGraph
    energy_history: List[float] = field(default_factory=list)
    energy_breakdown: List[Dict[str, float]] = field(default_factory=list)
    solve_reports: List[SolveReport] = field(default_factory=list)
    step_sizes: List[float] = field(default_factory=list)
    dumped_systems: List[Path] = field(default_factory=list)
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {
            "graph": self.graph.to_json(),
            "energy_history": self.energy_history,
            "iterations": len(self.solve_reports),
        }
