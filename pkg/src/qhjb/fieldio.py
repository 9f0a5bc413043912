"""CSV and JSON serialization of lattice fields.

Floats are written with ``repr`` so a round trip is bit-exact.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .lattice import ComplexField, Grid, ScalarField, VectorField

_AXES = ("x", "y")


def _fmt(v: float) -> str:
    return repr(float(v))


def field_columns(f) -> dict:
    """Named value columns of a field, flattened in C order."""
    if isinstance(f, ScalarField):
        return {"value": f.values.ravel()}
    if isinstance(f, ComplexField):
        return {"real": f.values.real.ravel(), "imag": f.values.imag.ravel()}
    if isinstance(f, VectorField):
        return {f"v{_AXES[i]}": f.values[i].ravel() for i in range(f.grid.ndim)}
    raise TypeError(f"not a field: {type(f).__name__}")


def write_field_csv(path, f) -> None:
    g = f.grid
    coords = [c.ravel() for c in g.coords()]
    cols = field_columns(f)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(_AXES[: g.ndim]) + list(cols))
        for row in zip(*coords, *cols.values()):
            w.writerow([_fmt(v) for v in row])


def read_field_csv(path, grid: Grid):
    """Inverse of :func:`write_field_csv`; the field kind is inferred from the header."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    names = header[grid.ndim:]
    data = body[:, grid.ndim:]
    if names == ["value"]:
        return ScalarField(grid, data[:, 0].reshape(grid.shape))
    if names == ["real", "imag"]:
        return ComplexField(grid, (data[:, 0] + 1j * data[:, 1]).reshape(grid.shape))
    if all(n.startswith("v") for n in names) and len(names) == grid.ndim:
        return VectorField(grid, data.T.reshape((grid.ndim,) + grid.shape))
    raise ValueError(f"unrecognized field columns {names}")


def write_field_manifest(path, grid: Grid, name: str, time_index: int, extra=None) -> None:
    doc = {"grid": grid.to_dict(), "field": name, "timeIndex": int(time_index)}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def write_ensemble_csv(path, positions: np.ndarray) -> None:
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        pos = pos[:, None]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["particleIndex"] + list(_AXES[: pos.shape[1]]))
        for i, row in enumerate(pos):
            w.writerow([i] + [_fmt(v) for v in row])
