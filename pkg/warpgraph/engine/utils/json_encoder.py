import dataclasses
import json

import numpy as np
from pydantic import BaseModel


class JSONEncoder(json.JSONEncoder):
    """Encoder for span payloads. Arrays are summarized, never dumped."""

    def default(self, o):
        if hasattr(o, "to_json"):
            return o.to_json()

        if isinstance(o, np.ndarray):
            return {"shape": list(o.shape), "dtype": str(o.dtype)}

        if isinstance(o, np.generic):
            return o.item()

        if isinstance(o, BaseModel):
            return o.model_dump(mode="json")

        if dataclasses.is_dataclass(o) and not isinstance(o, type):
            return {f.name: getattr(o, f.name) for f in dataclasses.fields(o)}

        if hasattr(o, "__fspath__"):
            return str(o)

        return super().default(o)
