"""Matrix file formats: plain CSV (one row per line) and a JSON envelope.

JSON envelope: {"rows": R, "cols": C, "data": [row-major floats or ints],
"bitwidth": W?, "scale": s?}. When bitwidth and scale are present the payload
is a quantized integer tensor.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .numerics import QuantTensor


def save_matrix_csv(path, m) -> None:
    m = np.asarray(m)
    with open(path, "w") as fh:
        for row in np.atleast_2d(m):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rows.append([float(tok) for tok in line.split(",")])
    if not rows:
        raise ValueError(f"{path}: empty matrix file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path}: ragged rows")
    return np.array(rows, dtype=np.float64)


def matrix_to_json(m) -> dict:
    if isinstance(m, QuantTensor):
        return {
            "rows": m.rows,
            "cols": m.cols,
            "data": [int(x) for x in m.data.ravel()],
            "bitwidth": m.bitwidth,
            "scale": m.scale,
        }
    m = np.asarray(m, dtype=np.float64)
    return {"rows": m.shape[0], "cols": m.shape[1], "data": [float(x) for x in m.ravel()]}


def matrix_from_json(obj: dict):
    rows, cols = int(obj["rows"]), int(obj["cols"])
    data = obj["data"]
    if len(data) != rows * cols:
        raise ValueError("rows*cols does not match data length")
    if "bitwidth" in obj:
        ints = np.array(data, dtype=np.int64).reshape(rows, cols)
        return QuantTensor(data=ints, bitwidth=int(obj["bitwidth"]), scale=float(obj["scale"]))
    return np.array(data, dtype=np.float64).reshape(rows, cols)


def save_matrix_json(path, m) -> None:
    Path(path).write_text(json.dumps(matrix_to_json(m), sort_keys=True, indent=2) + "\n")


def load_matrix_json(path):
    return matrix_from_json(json.loads(Path(path).read_text()))
