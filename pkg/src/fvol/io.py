"""CSV readers and writers shared by the command line and the scripts.

Curves file::

    id,l_1,...,l_p
    grid,<lambda_1>,...,<lambda_p>
    <id>,<x(lambda_1)>,...,<x(lambda_p)>

Responses file: ``id,y,delta`` with ``y`` empty when ``delta`` is 0.
Reports start with ``#``-prefixed ``key=value`` lines.
"""

from __future__ import annotations

import csv
import io
import platform
from typing import Iterable, Optional, TextIO

import numpy as np

from fvol.errors import SchemaError
from fvol.fda import FdaDataset, Grid


def versions() -> dict:
    from fvol import __version__

    return {"fvol": __version__, "numpy": np.__version__, "python": platform.python_version()}


def write_header(fh: TextIO, meta: dict) -> None:
    for key, value in {**meta, **{f"version_{k}": v for k, v in versions().items()}}.items():
        fh.write(f"# {key}={value}\n")


def read_header(path) -> dict:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
    return meta


def _rows(path) -> list:
    with open(path, newline="") as fh:
        return [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]


def write_curves(path, grid: Grid, curves, ids: Optional[Iterable] = None) -> None:
    curves = np.atleast_2d(curves)
    ids = range(curves.shape[0]) if ids is None else ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"l_{i + 1}" for i in range(len(grid))])
        w.writerow(["grid"] + [repr(float(v)) for v in grid.points])
        for i, row in zip(ids, curves):
            w.writerow([i] + [repr(float(v)) for v in row])


def read_curves(path):
    """Return ``(grid, curves, ids)``."""
    rows = _rows(path)
    if len(rows) < 2 or rows[0][0] != "id" or rows[1][0] != "grid":
        raise SchemaError(f"{path}: expected an 'id,l_1,...' header followed by a 'grid' row")
    p = len(rows[0]) - 1
    try:
        grid = Grid([float(v) for v in rows[1][1:]])
        ids, values = [], []
        for lineno, r in enumerate(rows[2:], start=3):
            if len(r) != p + 1:
                raise SchemaError(f"{path}: row {lineno} has {len(r) - 1} values, expected {p}")
            ids.append(r[0])
            values.append([float(v) for v in r[1:]])
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{path}: {exc}") from exc
    if not values:
        raise SchemaError(f"{path}: no curves")
    return grid, np.array(values), ids


def write_responses(path, ids, y, delta) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "y", "delta"])
        for i, yy, d in zip(ids, y, delta):
            w.writerow([i, repr(float(yy)) if d else "", int(d)])


def read_responses(path):
    """Return ``(ids, y, delta)`` with ``nan`` for missing responses."""
    rows = _rows(path)
    if not rows or [c.strip() for c in rows[0]] != ["id", "y", "delta"]:
        raise SchemaError(f"{path}: expected header 'id,y,delta'")
    ids, y, delta = [], [], []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != 3:
            raise SchemaError(f"{path}: row {lineno} needs 3 columns")
        try:
            d = int(r[2])
            if d not in (0, 1):
                raise ValueError("delta must be 0 or 1")
            val = float(r[1]) if d else float("nan")
        except ValueError as exc:
            raise SchemaError(f"{path}: row {lineno}: {exc}") from exc
        ids.append(r[0])
        y.append(val)
        delta.append(d)
    return ids, np.array(y), np.array(delta, dtype=np.int8)


def load_dataset(curves_path, responses_path) -> FdaDataset:
    grid, curves, ids = read_curves(curves_path)
    rids, y, delta = read_responses(responses_path)
    if list(rids) != list(ids):
        raise SchemaError("curve ids and response ids differ")
    return FdaDataset(grid, curves, y, delta, tuple(ids))


def write_table(path, columns, rows, meta: dict) -> None:
    with open(path, "w", newline="") as fh:
        write_header(fh, meta)
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, (float, np.floating)) else v for v in row])


def table_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()
