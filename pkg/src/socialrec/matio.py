"""Dense matrix interchange: JSON sidecar plus raw little-endian float binary.

A matrix lives in two files, ``<base>.json`` and ``<base>.bin``.  The sidecar
records rows, cols, dtype, storage order and one external id per row; the
binary holds rows*cols values in row-major order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}

_REQUIRED_KEYS = ("rows", "cols", "dtype", "order", "ids")


def write_matrix(base, array, ids, dtype: str = "f32", meta: dict | None = None) -> None:
    """Write a 2-d array as a sidecar/binary pair rooted at `base`."""
    arr = np.ascontiguousarray(array)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {arr.shape}")
    if len(ids) != arr.shape[0]:
        raise ValueError(f"got {len(ids)} ids for {arr.shape[0]} rows")
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}; expected one of {sorted(_DTYPES)}")
    sidecar = {
        "rows": int(arr.shape[0]),
        "cols": int(arr.shape[1]),
        "dtype": dtype,
        "order": "row-major",
        "ids": [str(i) for i in ids],
    }
    if meta:
        sidecar["meta"] = meta
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    with open(_sidecar_path(base), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh)
        fh.write("\n")
    arr.astype(_DTYPES[dtype]).tofile(_binary_path(base))


def read_matrix(base):
    """Read a sidecar/binary pair; returns (array, ids, meta).

    The array keeps the stored precision (float32 or float64).
    """
    base = Path(base)
    side_path = _sidecar_path(base)
    bin_path = _binary_path(base)
    if not side_path.exists():
        raise FileNotFoundError(f"missing sidecar {side_path}")
    if not bin_path.exists():
        raise FileNotFoundError(f"missing binary {bin_path}")
    with open(side_path, encoding="utf-8") as fh:
        sidecar = json.load(fh)
    for key in _REQUIRED_KEYS:
        if key not in sidecar:
            raise ValueError(f"{side_path}: sidecar missing key {key!r}")
    if sidecar["order"] != "row-major":
        raise ValueError(f"{side_path}: unsupported order {sidecar['order']!r}")
    if sidecar["dtype"] not in _DTYPES:
        raise ValueError(f"{side_path}: unsupported dtype {sidecar['dtype']!r}")
    rows, cols = int(sidecar["rows"]), int(sidecar["cols"])
    ids = [str(i) for i in sidecar["ids"]]
    if len(ids) != rows:
        raise ValueError(f"{side_path}: {len(ids)} ids for {rows} rows")
    dt = _DTYPES[sidecar["dtype"]]
    expected = rows * cols * dt.itemsize
    actual = bin_path.stat().st_size
    if actual != expected:
        raise ValueError(f"{bin_path}: expected {expected} bytes, found {actual}")
    data = np.fromfile(bin_path, dtype=dt).reshape(rows, cols)
    return data, ids, sidecar.get("meta", {})


def _sidecar_path(base: Path) -> Path:
    return base.parent / (base.name + ".json")


def _binary_path(base: Path) -> Path:
    return base.parent / (base.name + ".bin")
