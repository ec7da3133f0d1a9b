"""Writer for the dense-matrix interchange format the recommender reads.

One matrix is a ``<base>.json`` sidecar (rows, cols, dtype, order, ids,
optional meta) plus ``<base>.bin`` holding rows*cols little-endian floats
in row-major order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def write_matrix(base, array, ids, meta: dict | None = None) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {arr.shape}")
    if len(ids) != arr.shape[0]:
        raise ValueError(f"got {len(ids)} ids for {arr.shape[0]} rows")
    sidecar = {
        "rows": int(arr.shape[0]),
        "cols": int(arr.shape[1]),
        "dtype": "f32",
        "order": "row-major",
        "ids": [str(i) for i in ids],
    }
    if meta:
        sidecar["meta"] = meta
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    with open(base.parent / (base.name + ".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh)
        fh.write("\n")
    arr.tofile(base.parent / (base.name + ".bin"))
