"""Rectangular lattices, sampled fields and second-order difference calculus.

All differential operators are built from a single central first-difference
``D``.  The Laplacian is *defined* as ``divergence(gradient(f))`` so that the
composition identity holds exactly and, on periodic grids, the discrete
divergence theorem (``integrate(laplacian(f)) == 0``) holds to rounding.  On
the interior this is the three-point stencil at spacing ``2h``::

    (f[i+2] - 2 f[i] + f[i-2]) / (4 h^2)

Clamped boundaries use second-order one-sided first differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PERIODIC = "periodic"
CLAMPED = "clamped"
_BOUNDARIES = (PERIODIC, CLAMPED)


class GridMismatchError(ValueError):
    """Raised when fields attached to different grids are combined."""


@dataclass(frozen=True)
class Grid:
    """Lattice geometry.

    Parameters
    ----------
    extent : tuple of float
        Physical length per axis.
    points : tuple of int
        Number of sites per axis (>= 8).
    boundary : {"periodic", "clamped"}
    origin : tuple of float, optional
        Coordinate of site 0 on each axis.  Defaults to ``-extent/2``.
    """

    extent: tuple
    points: tuple
    boundary: str = CLAMPED
    origin: tuple = None

    def __post_init__(self):
        extent = tuple(float(e) for e in np.atleast_1d(self.extent))
        points = tuple(int(p) for p in np.atleast_1d(self.points))
        if len(extent) != len(points):
            raise ValueError("extent and points must have the same length")
        if len(points) not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")
        if any(p < 8 for p in points):
            raise ValueError("at least 8 points per axis are required")
        if any(not np.isfinite(e) or e <= 0 for e in extent):
            raise ValueError("extent must be positive")
        if self.boundary not in _BOUNDARIES:
            raise ValueError(f"boundary must be one of {_BOUNDARIES}")
        if self.origin is None:
            origin = tuple(-e / 2.0 for e in extent)
        else:
            origin = tuple(float(o) for o in np.atleast_1d(self.origin))
            if len(origin) != len(points):
                raise ValueError("origin must have one entry per axis")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def line(cls, points, extent, boundary=CLAMPED, origin=None):
        return cls((extent,), (points,), boundary, None if origin is None else (origin,))

    @classmethod
    def square(cls, points, extent, boundary=CLAMPED, origin=None):
        o = None if origin is None else (origin, origin)
        return cls((extent, extent), (points, points), boundary, o)

    @property
    def ndim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple:
        return self.points

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC

    @property
    def spacing(self) -> tuple:
        if self.periodic:
            return tuple(e / n for e, n in zip(self.extent, self.points))
        return tuple(e / (n - 1) for e, n in zip(self.extent, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis(self, i: int) -> np.ndarray:
        return self.origin[i] + self.spacing[i] * np.arange(self.points[i])

    def coords(self) -> tuple:
        """Coordinate arrays broadcast to the full grid shape (``ij`` indexing)."""
        return tuple(np.meshgrid(*[self.axis(i) for i in range(self.ndim)], indexing="ij"))

    def upper(self, i: int) -> float:
        """Upper end of the domain on axis ``i`` (exclusive for periodic grids)."""
        return self.origin[i] + self.extent[i]

    def to_dict(self) -> dict:
        return {
            "extent": list(self.extent),
            "points": list(self.points),
            "boundary": self.boundary,
            "origin": list(self.origin),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(tuple(d["extent"]), tuple(d["points"]), d.get("boundary", CLAMPED),
                   tuple(d["origin"]) if d.get("origin") is not None else None)

    def refined(self, factor: int = 2) -> "Grid":
        """Same domain with the spacing divided by ``factor``."""
        if self.periodic:
            pts = tuple(n * factor for n in self.points)
        else:
            pts = tuple((n - 1) * factor + 1 for n in self.points)
        return Grid(self.extent, pts, self.boundary, self.origin)


def _frozen(a) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(np.asarray(self.values, dtype=float))
        if v.shape != self.grid.shape:
            raise GridMismatchError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        object.__setattr__(self, "values", v)

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)


@dataclass(frozen=True)
class ComplexField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(np.asarray(self.values, dtype=complex))
        if v.shape != self.grid.shape:
            raise GridMismatchError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        object.__setattr__(self, "values", v)

    def norm(self) -> float:
        """Lattice L2 norm ``sqrt(sum |psi|^2 * cell_volume)``.

        This is the inner product the time stepper preserves exactly, also on
        clamped grids where :func:`integrate` would use trapezoid weights.
        """
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.cell_volume))


@dataclass(frozen=True)
class VectorField:
    """One real component per axis, stored as an array of shape ``(ndim, *grid.shape)``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(np.asarray(self.values, dtype=float))
        if v.shape != (self.grid.ndim,) + self.grid.shape:
            raise GridMismatchError("vector field must have one component per axis")
        object.__setattr__(self, "values", v)

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.values[i])

    def dot(self, other: "VectorField") -> ScalarField:
        _same_grid(self, other)
        return ScalarField(self.grid, np.sum(self.values * other.values, axis=0))

    def norm2(self) -> ScalarField:
        return ScalarField(self.grid, np.sum(self.values ** 2, axis=0))


def _same_grid(*fields) -> Grid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError("fields live on different grids")
    return g


def diff(values: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    """Second-order central first difference of a raw array along ``axis``."""
    a = np.asarray(values, dtype=float)
    if periodic:
        return (np.roll(a, -1, axis=axis) - np.roll(a, 1, axis=axis)) / (2.0 * h)
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - a[:-2]) / (2.0 * h)
    out[0] = (-3.0 * a[0] + 4.0 * a[1] - a[2]) / (2.0 * h)
    out[-1] = (3.0 * a[-1] - 4.0 * a[-2] + a[-3]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def gradient(f: ScalarField) -> VectorField:
    g = f.grid
    comps = [diff(f.values, g.spacing[i], i, g.periodic) for i in range(g.ndim)]
    return VectorField(g, np.stack(comps))


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    total = np.zeros(g.shape)
    for i in range(g.ndim):
        total += diff(v.values[i], g.spacing[i], i, g.periodic)
    return ScalarField(g, total)


def laplacian(f: ScalarField) -> ScalarField:
    return divergence(gradient(f))


def laplacian_1d_matrix(n: int, h: float, periodic: bool):
    """Sparse matrix of the interior Laplacian stencil with zero extension.

    Used by the time stepper: it is symmetric, so Hamiltonians built from it
    are Hermitian.  For periodic grids it coincides with :func:`laplacian`;
    for clamped grids it differs only on the two sites nearest each edge.
    """
    import scipy.sparse as sp

    c = 1.0 / (4.0 * h * h)
    main = np.full(n, -2.0 * c)
    off = np.full(n - 2, c)
    m = sp.diags([off, main, off], [-2, 0, 2], shape=(n, n), format="lil")
    if periodic:
        m[0, n - 2] = c
        m[1, n - 1] = c
        m[n - 2, 0] = c
        m[n - 1, 1] = c
    return m.tocsc()


def integrate(f: ScalarField) -> float:
    """Riemann sum (periodic) or trapezoid rule (clamped) times the cell volume."""
    g = f.grid
    vals = np.asarray(f.values, dtype=float)
    if g.periodic:
        return float(np.sum(vals) * g.cell_volume)
    w = np.ones(g.shape)
    for i in range(g.ndim):
        idx = [slice(None)] * g.ndim
        for end in (0, -1):
            idx[i] = end
            w[tuple(idx)] *= 0.5
    return float(np.sum(vals * w) * g.cell_volume)


def convergence_order(errors: Sequence[float], ratio: float = 2.0) -> list:
    """Observed orders ``log(e_k / e_{k+1}) / log(ratio)`` for a refinement sequence."""
    e = np.asarray(errors, dtype=float)
    return list(np.log(e[:-1] / e[1:]) / np.log(ratio))
