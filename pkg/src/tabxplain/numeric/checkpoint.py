"""JSON parameter checkpoints: ``{layer: {"shape": [...], "values": [...]}}``.

Floats are written with ``repr`` (shortest round-tripping decimal), so a
reload reproduces every bit.
"""

from __future__ import annotations

import json
from typing import Mapping

import numpy as np


def params_to_json(params: Mapping[str, np.ndarray]) -> dict:
    return {name: {"shape": list(arr.shape), "values": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in params.items()}


def params_from_json(doc: Mapping[str, dict]) -> dict[str, np.ndarray]:
    out = {}
    for name, entry in doc.items():
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        out[name] = arr
    return out


def dumps(params: Mapping[str, np.ndarray]) -> str:
    return json.dumps(params_to_json(params), sort_keys=True)


def loads(text: str) -> dict[str, np.ndarray]:
    return params_from_json(json.loads(text))
