"""Small serialization helpers shared by the report writers."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def jsonable(obj):
    """Plain-Python copy of ``obj`` with NaN/inf mapped to None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(obj, path) -> None:
    Path(path).write_text(dumps(obj))
