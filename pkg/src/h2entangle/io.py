"""CSV, JSON and checksum helpers for the command-line outputs."""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

PROFILE_COLUMNS = ["s", "S_local", "S_local_normalized", "M_m", "region_side"]
CURVE_COLUMNS = ["d", "energy_exact", "energy_tdqmc", "S_global_exact", "S_global_tdqmc", "S_local_peak"]
WALKER_COLUMNS = ["k", "x1", "x2"]


def fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return "nan"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _atomic_write(path: Path, text: str) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="")
    os.replace(tmp, path)
    return path


def write_rows(path, columns, rows) -> Path:
    lines = [",".join(columns)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return _atomic_write(Path(path), "\n".join(lines) + "\n")


def read_rows(path, columns=None) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if columns is not None and reader.fieldnames != list(columns):
            raise ValueError(f"{path}: columns {reader.fieldnames} != {list(columns)}")
        return list(reader)


def write_walkers(path, x1, x2) -> Path:
    return write_rows(path, WALKER_COLUMNS, zip(range(len(x1)), x1, x2))


def write_matrix(path, x, matrix) -> Path:
    """Real part of a matrix with a header row of column coordinates and one row per x."""
    m = np.real(matrix)
    lines = ["x," + ",".join(fmt(v) for v in x)]
    lines += [fmt(xi) + "," + ",".join(fmt(v) for v in row) for xi, row in zip(x, m)]
    return _atomic_write(Path(path), "\n".join(lines) + "\n")


def read_matrix(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if header[0] != "x":
        raise ValueError(f"{path}: not a matrix file")
    return data[:, 0], data[:, 1:]


def write_json(path, obj) -> Path:
    return _atomic_write(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
