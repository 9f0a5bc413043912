"""Polar (density, phase) variables of a lattice wavefunction and the residuals
of the hydrodynamic equations they obey.

The phase is never read off ``arg(psi)`` directly.  Instead every lattice
link carries the connection angle ``theta = arg(conj(psi_a) psi_b)`` and the
phase is the line integral of that connection from a reference site.  The
velocity field uses the same link angles, so the discrete gradient of the
reconstructed phase equals ``m * v`` exactly wherever the connection is
curl-free.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .lattice import (ComplexField, Grid, ScalarField, VectorField, divergence,
                      gradient, integrate, laplacian)

DENSITY_FLOOR = 1e-6
EDGE_BAND = 2
_TINY = np.finfo(float).tiny

Q_FORMS = ("sqrt", "log_grad", "log_laplacian", "third")


class PhaseUndefinedError(ValueError):
    """The density mask is disconnected, so no single phase exists across the node."""


class MaskInvariantError(ValueError):
    """A masked-in site has non-positive density."""


# --------------------------------------------------------------------------- masks

def support_mask(rho, floor: float = DENSITY_FLOOR) -> np.ndarray:
    """Sites where ``rho > floor * max(rho)``."""
    r = rho.values if isinstance(rho, ScalarField) else np.asarray(rho)
    return r > floor * np.max(r)


def erode(mask: np.ndarray, grid: Grid, width: int = EDGE_BAND) -> np.ndarray:
    """Shrink ``mask`` by ``width`` sites along every axis.

    On clamped grids sites within ``width`` of the boundary are dropped too.
    """
    out = np.array(mask, dtype=bool)
    for axis in range(grid.ndim):
        base = out.copy()
        for s in range(1, width + 1):
            for sign in (1, -1):
                shifted = np.roll(base, sign * s, axis=axis)
                if not grid.periodic:
                    idx = [slice(None)] * grid.ndim
                    idx[axis] = slice(0, s) if sign > 0 else slice(-s, None)
                    shifted[tuple(idx)] = False
                out &= shifted
    return out


def analysis_mask(rho_masks: Sequence[np.ndarray], grid: Grid) -> np.ndarray:
    """Intersection of support masks, eroded by the edge band."""
    m = np.logical_and.reduce([np.asarray(x, dtype=bool) for x in rho_masks])
    return erode(m, grid, EDGE_BAND)


# --------------------------------------------------------------------------- residual reports

@dataclass
class ResidualReport:
    name: str
    residual: ScalarField
    masked_max: float
    masked_l2: float
    mask: np.ndarray = field(repr=False)
    convergence_order: Optional[float] = None

    @classmethod
    def build(cls, name: str, values: np.ndarray, grid: Grid, mask: np.ndarray) -> "ResidualReport":
        vals = np.where(mask, values, 0.0)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError(f"residual {name!r} is not finite on masked sites")
        mx = float(np.max(np.abs(vals))) if np.any(mask) else 0.0
        l2 = float(np.sqrt(np.sum(vals ** 2) * grid.cell_volume))
        return cls(name, ScalarField(grid, vals), mx, l2, np.array(mask, dtype=bool))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "maskedMaxAbs": self.masked_max,
            "maskedL2": self.masked_l2,
            "convergenceOrder": self.convergence_order,
            "maskedSites": int(np.count_nonzero(self.mask)),
        }


def observed_order(values: Sequence[float], ratio: float = 2.0) -> float:
    """Order from the last two entries of a refinement sequence."""
    return float(np.log(values[-2] / values[-1]) / np.log(ratio))


# --------------------------------------------------------------------------- basic variables

def density(psi: ComplexField) -> ScalarField:
    """``|psi|^2`` renormalized to unit integral."""
    rho = np.abs(psi.values) ** 2
    return ScalarField(psi.grid, rho / integrate(ScalarField(psi.grid, rho)))


def _link_angles(psi: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    """``theta[j] = arg(conj(psi[j]) psi[j+1])`` along ``axis``; last entry wraps."""
    nxt = np.roll(psi, -1, axis=axis)
    theta = np.angle(np.conj(psi) * nxt)
    if not periodic:
        idx = [slice(None)] * psi.ndim
        idx[axis] = -1
        theta[tuple(idx)] = 0.0
    return theta


def _link_derivative(theta: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    """Central derivative assembled from link increments (matches ``lattice.diff``)."""
    if periodic:
        return (theta + np.roll(theta, 1, axis=axis)) / (2.0 * h)
    t = np.moveaxis(theta, axis, 0)
    out = np.empty_like(t)
    out[1:-1] = (t[1:-1] + t[:-2]) / (2.0 * h)
    out[0] = (3.0 * t[0] - t[1]) / (2.0 * h)
    out[-1] = (3.0 * t[-2] - t[-3]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def velocity_field(psi: ComplexField, mass: float = 1.0, hbar: float = 1.0,
                   mask: Optional[np.ndarray] = None) -> VectorField:
    """Guidance velocity ``(hbar/m) grad(phase)`` built from link angles; zero off-mask."""
    g = psi.grid
    if mask is None:
        mask = support_mask(np.abs(psi.values) ** 2)
    comps = []
    for axis in range(g.ndim):
        theta = _link_angles(psi.values, axis, g.periodic)
        v = (hbar / mass) * _link_derivative(theta, g.spacing[axis], axis, g.periodic)
        comps.append(np.where(mask, v, 0.0))
    return VectorField(g, np.stack(comps))


@dataclass
class PhaseReconstruction:
    phase: ScalarField
    mask: np.ndarray
    reference: tuple
    winding: np.ndarray
    vortex_plaquettes: int
    components: int
    slope: tuple = ()

    @property
    def relative(self) -> np.ndarray:
        """Phase with the reference site's value subtracted."""
        return np.where(self.mask, self.phase.values - self.phase.values[self.reference], 0.0)


def _components(mask: np.ndarray):
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    return ndimage.label(mask, structure=structure)


def reconstruct_phase(psi: ComplexField, reference=None, hbar: float = 1.0,
                      restrict_to_component: bool = False,
                      mask: Optional[np.ndarray] = None) -> PhaseReconstruction:
    """Integrate link angles along a breadth-first spanning tree of the mask."""
    g = psi.grid
    rho = np.abs(psi.values) ** 2
    if mask is None:
        mask = support_mask(rho)
    mask = np.array(mask, dtype=bool)
    if reference is None:
        reference = np.unravel_index(int(np.argmax(np.where(mask, rho, -1.0))), g.shape)
    reference = tuple(int(i) for i in np.atleast_1d(reference))
    if not mask[reference]:
        raise PhaseUndefinedError("reference site lies outside the density support")
    labels, count = _components(mask)
    if count > 1:
        if not restrict_to_component:
            raise PhaseUndefinedError(
                f"density support has {count} disconnected components; phase is undefined across nodes")
        mask = labels == labels[reference]

    thetas = [_link_angles(psi.values, ax, g.periodic) for ax in range(g.ndim)]
    slope = ring_slopes(thetas, mask, g)
    # integrate the winding-free part so no seam appears where the tree closes a ring
    flat = [thetas[ax] - slope[ax] * g.spacing[ax] for ax in range(g.ndim)]
    S = np.zeros(g.shape)
    seen = np.zeros(g.shape, dtype=bool)
    S[reference] = np.angle(psi.values[reference])
    seen[reference] = True
    frontier = seen.copy()
    # axis order: last axis first, so the reference row is integrated before columns
    moves = [(ax, d) for ax in reversed(range(g.ndim)) for d in (1, -1)]
    while frontier.any():
        new = np.zeros(g.shape, dtype=bool)
        for ax, d in moves:
            # candidate target sites reached from frontier by one step along (ax, d)
            src_shift = np.roll(frontier, d, axis=ax)
            if d == 1:
                inc = np.roll(flat[ax], 1, axis=ax)            # link (j-1 -> j)
            else:
                inc = -flat[ax]                                # link (j+1 -> j) reversed
            val = np.roll(S, d, axis=ax) + inc
            if not g.periodic:
                idx = [slice(None)] * g.ndim
                idx[ax] = 0 if d == 1 else -1
                src_shift[tuple(idx)] = False
            take = src_shift & mask & ~seen & ~new
            S = np.where(take, val, S)
            new |= take
        seen |= new
        frontier = new
    ramp = sum(slope[ax] * (x - x[reference]) for ax, x in enumerate(g.coords()))
    S = np.where(seen, S + ramp, 0.0) * hbar

    winding = np.zeros(g.shape, dtype=int)
    if g.ndim == 2:
        tx, ty = thetas
        circ = tx + np.roll(ty, -1, axis=0) - np.roll(tx, -1, axis=1) - ty
        corners = mask & np.roll(mask, -1, 0) & np.roll(mask, -1, 1) & np.roll(np.roll(mask, -1, 0), -1, 1)
        if not g.periodic:
            corners[-1, :] = False
            corners[:, -1] = False
        winding = np.where(corners, np.rint(circ / (2 * np.pi)).astype(int), 0)
    return PhaseReconstruction(ScalarField(g, S), seen, reference, winding,
                               int(np.count_nonzero(winding)), int(count),
                               tuple(hbar * float(a) for a in slope))


def ring_slopes(thetas, mask: np.ndarray, grid: Grid) -> np.ndarray:
    """Mean phase slope (per unit hbar) carried by complete periodic rings of the mask.

    A ring closes only on periodic grids when the mask covers a full line; its
    link angles then sum to ``2 pi n``, and the phase is ``n``-valued unless the
    uniform slope ``2 pi n / L`` is split off.  Zero for open masks.
    """
    slope = np.zeros(grid.ndim)
    if not grid.periodic:
        return slope
    for ax in range(grid.ndim):
        full = np.all(mask, axis=ax)
        if not np.any(full):
            continue
        turns = np.rint(np.sum(thetas[ax], axis=ax)[full] / (2 * np.pi))
        slope[ax] = 2 * np.pi * float(np.round(np.mean(turns))) / grid.extent[ax]
    return slope


def phase_gradient(grid: Grid, values: np.ndarray, slope=()) -> VectorField:
    """Lattice gradient of a phase-like field that carries a uniform winding slope.

    The slope is removed before differencing (so the periodic seam of the
    stored values is invisible) and added back afterwards.
    """
    if not any(slope):
        return gradient(ScalarField(grid, values))
    ramp = sum(a * x for a, x in zip(slope, grid.coords()))
    g = gradient(ScalarField(grid, values - ramp)).values
    return VectorField(grid, g + np.reshape(np.asarray(slope, dtype=float), (-1,) + (1,) * grid.ndim))


def phase(psi: ComplexField, reference=None, hbar: float = 1.0,
          restrict_to_component: bool = False) -> ScalarField:
    """Action field ``S`` (units of hbar) with ``S(reference) = hbar * arg(psi(reference))``."""
    return reconstruct_phase(psi, reference, hbar, restrict_to_component).phase


# --------------------------------------------------------------------------- quantum potential

def _checked_log(rho: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if np.any(rho[mask] <= 0):
        raise MaskInvariantError("non-positive density at a masked-in site")
    return np.log(np.maximum(rho, _TINY))


def quantum_potential(rho: ScalarField, form: str = "sqrt", hbar: float = 1.0,
                      mass: float = 1.0, mask: Optional[np.ndarray] = None) -> ScalarField:
    """Quantum potential in one of four algebraically equivalent forms.

    ``sqrt``:           -(hbar^2/2m) lap(sqrt(rho)) / sqrt(rho)
    ``log_grad``:       (hbar^2/8m) |grad log rho|^2 - (hbar^2/4m) lap(rho)/rho
    ``log_laplacian``:  -(hbar^2/8m) |grad log rho|^2 - (hbar^2/4m) lap(log rho)
    ``third``:          -(hbar^2/8m) lap(log rho) - (hbar^2/8m) lap(rho)/rho

    ``third`` is the mean of ``log_grad`` and ``log_laplacian`` identically,
    also on the lattice.  Off-mask sites carry 0.
    """
    if form not in Q_FORMS:
        raise ValueError(f"unknown quantum potential form {form!r}; expected one of {Q_FORMS}")
    g = rho.grid
    r = np.asarray(rho.values, dtype=float)
    if mask is None:
        mask = support_mask(r)
    c = hbar * hbar / mass
    safe = np.where(mask, r, 1.0)
    if form == "sqrt":
        root = np.sqrt(np.maximum(r, 0.0))
        if np.any(r[mask] <= 0):
            raise MaskInvariantError("non-positive density at a masked-in site")
        q = -0.5 * c * laplacian(ScalarField(g, root)).values / np.where(mask, root, 1.0)
    else:
        logr = ScalarField(g, _checked_log(r, mask))
        lap_rho_over_rho = laplacian(rho).values / safe
        if form == "log_grad":
            q = c / 8 * gradient(logr).norm2().values - c / 4 * lap_rho_over_rho
        elif form == "log_laplacian":
            q = -c / 8 * gradient(logr).norm2().values - c / 4 * laplacian(logr).values
        else:
            q = -c / 8 * laplacian(logr).values - c / 8 * lap_rho_over_rho
    return ScalarField(g, np.where(mask, q, 0.0))


# --------------------------------------------------------------------------- madelung bundle

@dataclass
class MadelungFields:
    rho: ScalarField
    S: ScalarField
    gradS: VectorField
    mask: np.ndarray


def madelung(psi: ComplexField, hbar: float = 1.0, mass: float = 1.0, reference=None,
             restrict_to_component: bool = False) -> MadelungFields:
    rho = density(psi)
    rec = reconstruct_phase(psi, reference, hbar, restrict_to_component)
    v = velocity_field(psi, mass, hbar, rec.mask)
    return MadelungFields(rho, rec.phase, VectorField(psi.grid, mass * v.values), rec.mask)


# --------------------------------------------------------------------------- time-centred frames

@dataclass
class Frames:
    """Three time-adjacent snapshots of (S, rho) around a centre time.

    ``S`` values are continuous in time (any 2*pi*hbar jumps already removed).
    """

    grid: Grid
    S: tuple
    rho: tuple
    dt: float
    mask: np.ndarray
    hbar: float = 1.0
    mass: float = 1.0
    slope: tuple = ()

    @property
    def dS_dt(self) -> np.ndarray:
        return (self.S[2] - self.S[0]) / (2.0 * self.dt)

    @property
    def drho_dt(self) -> np.ndarray:
        return (self.rho[2] - self.rho[0]) / (2.0 * self.dt)

    @property
    def S_mid(self) -> ScalarField:
        return ScalarField(self.grid, self.S[1])

    @property
    def rho_mid(self) -> ScalarField:
        return ScalarField(self.grid, self.rho[1])

    def grad(self, values: np.ndarray) -> VectorField:
        """Gradient of a phase-like field of these frames (winding slope aware)."""
        return phase_gradient(self.grid, values, self.slope)

    @classmethod
    def from_trajectory(cls, trajectory, index: int, reference=None,
                        restrict_to_component: bool = False) -> "Frames":
        if index <= 0 or index >= len(trajectory) - 1:
            raise ValueError("residuals need snapshots on both sides of the requested time")
        t = trajectory.times
        dts = (t[index] - t[index - 1], t[index + 1] - t[index])
        if abs(dts[0] - dts[1]) > 1e-9 * max(dts):
            raise ValueError("snapshots around the requested time are not equally spaced")
        psis = trajectory.psis[index - 1: index + 2]
        hbar, mass = trajectory.hbar, trajectory.mass
        g = trajectory.grid
        rhos = [density(p) for p in psis]
        masks = [support_mask(r) for r in rhos]
        mid = reconstruct_phase(psis[1], reference, hbar, restrict_to_component)
        ref = mid.reference
        joint = masks[0] & masks[1] & masks[2] & mid.mask
        Ss = []
        for p in psis:
            rec = reconstruct_phase(p, ref, hbar, restrict_to_component=True, mask=joint)
            # relative phase plus the reference angle unwrapped against the middle snapshot
            jump = np.angle(p.values[ref] * np.conj(psis[1].values[ref]))
            Ss.append(rec.relative + hbar * (np.angle(psis[1].values[ref]) + jump))
        return cls(g, tuple(Ss), tuple(r.values for r in rhos), dts[0],
                   analysis_mask([joint], g), hbar, mass, mid.slope)


def _as_values(V, grid: Grid) -> np.ndarray:
    if V is None:
        return np.zeros(grid.shape)
    if hasattr(V, "values") and callable(V.values):
        return V.values(grid)
    if isinstance(V, ScalarField):
        return V.values
    return np.broadcast_to(np.asarray(V, dtype=float), grid.shape)


def _frames(obj, index) -> Frames:
    if isinstance(obj, Frames):
        return obj
    return Frames.from_trajectory(obj, index)


def _masked_mean(values: np.ndarray, mask: np.ndarray) -> float:
    return float(np.mean(values[mask])) if np.any(mask) else 0.0


def hj_residual(source: Union[Frames, object], index: Optional[int] = None, V=None,
                q_form: str = "sqrt", subtract_mean: bool = False) -> ResidualReport:
    """``dS/dt + |grad S|^2/2m + V + Q`` at the centre frame.

    ``source`` is a :class:`Frames` bundle or a trajectory with ``index``.  With
    ``subtract_mean`` the masked mean is removed, which discards any
    per-snapshot constant in ``S``.
    """
    fr = _frames(source, index)
    if V is None and not isinstance(source, Frames):
        V = source.potential
    g = fr.grid
    dS = fr.grad(fr.S[1])
    q = quantum_potential(fr.rho_mid, q_form, fr.hbar, fr.mass,
                          mask=support_mask(fr.rho_mid))
    r = fr.dS_dt + dS.norm2().values / (2 * fr.mass) + _as_values(V, g) + q.values
    if subtract_mean:
        r = r - _masked_mean(r, fr.mask)
    return ResidualReport.build("quantumHJ", r, g, fr.mask)


def continuity_residual(source, index: Optional[int] = None) -> ResidualReport:
    """``drho/dt + div(rho grad S / m)`` at the centre frame."""
    fr = _frames(source, index)
    g = fr.grid
    flux = fr.grad(fr.S[1]).values * fr.rho[1] / fr.mass
    r = fr.drho_dt + divergence(VectorField(g, flux)).values
    return ResidualReport.build("continuity", r, g, fr.mask)


def phase_history(trajectory, reference=None, restrict_to_component: bool = True):
    """Time-continuous phases for every snapshot.

    The reference angle is unwrapped snapshot to snapshot, so consecutive
    phases differ by their true increment (assuming it stays below pi*hbar).
    Returns ``(phases, masks, slopes)``; see :func:`phase_gradient` for slopes.
    """
    hbar = trajectory.hbar
    first = reconstruct_phase(trajectory.psis[0], reference, hbar, restrict_to_component)
    ref = first.reference
    angle = np.angle(trajectory.psis[0].values[ref])
    phases, masks, slopes, prev = [], [], [], trajectory.psis[0].values[ref]
    for psi in trajectory.psis:
        rec = reconstruct_phase(psi, ref, hbar, restrict_to_component=True)
        angle += np.angle(psi.values[ref] * np.conj(prev))
        prev = psi.values[ref]
        phases.append(np.where(rec.mask, rec.relative + hbar * angle, 0.0))
        masks.append(rec.mask)
        slopes.append(rec.slope)
    return phases, masks, slopes
