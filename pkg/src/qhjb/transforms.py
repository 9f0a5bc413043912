"""Logarithmic phase transformations and the residuals of the equations they produce.

A transformation adds ``sign * (k/2) log rho`` to a phase.  ``sign = +1`` is
the forward transformation (its particles see a diffusion term with the
retrocausal Lagrangian derivative ``d/dt + v.grad + (k/2m) lap``), ``sign = -1``
is the retro one (forward-causal derivative with ``-(k/2m) lap``).

Every residual here is evaluated on :class:`~qhjb.madelung.Frames`, three
time-adjacent snapshots, so the same code serves evolved wavefunctions and
manufactured analytic pairs.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lattice import Grid, ScalarField, VectorField, divergence, gradient, laplacian
from .madelung import (Frames, ResidualReport, _as_values, _frames, analysis_mask, erode,
                       quantum_potential, support_mask)

FORWARD = "forward"
RETRO = "retro"

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class TransformSpec:
    direction: str = FORWARD
    k: float = 1.0

    def __post_init__(self):
        if self.direction not in (FORWARD, RETRO):
            raise ValueError(f"direction must be {FORWARD!r} or {RETRO!r}")
        if not self.k > 0:
            raise ValueError("diffusion constant k must be positive")

    @property
    def sign(self) -> int:
        return 1 if self.direction == FORWARD else -1

    @property
    def signed_k(self) -> float:
        return self.sign * self.k

    def inverse(self) -> "TransformSpec":
        return TransformSpec(RETRO if self.direction == FORWARD else FORWARD, self.k)

    @property
    def derivative_kind(self) -> str:
        """Lagrangian derivative paired with this transformation."""
        return "retrocausal" if self.direction == FORWARD else "forwardCausal"


@dataclass
class TransformedFrames(Frames):
    spec: Optional[TransformSpec] = None


def _log_density(rho: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if np.any(rho[mask] <= 0):
        raise ValueError("non-positive density at a masked-in site")
    return np.log(np.maximum(rho, _TINY))


def _shift(S: np.ndarray, rho: np.ndarray, signed_k: float, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, S + 0.5 * signed_k * _log_density(rho, mask), 0.0)


def transform_phase(S: ScalarField, rho: ScalarField, spec: TransformSpec,
                    mask: Optional[np.ndarray] = None) -> ScalarField:
    """``S + sign * (k/2) log rho`` on masked-in sites, 0 elsewhere."""
    if mask is None:
        mask = support_mask(rho)
    return ScalarField(S.grid, _shift(S.values, rho.values, spec.signed_k, mask))


def _support(fr: Frames) -> np.ndarray:
    return np.logical_and.reduce([support_mask(r) for r in fr.rho])


def transform_frames(frames: Frames, spec: TransformSpec) -> TransformedFrames:
    """Apply the transformation to all three snapshots of a frame bundle."""
    keep = _support(frames)
    Sp = tuple(_shift(S, r, spec.signed_k, keep) for S, r in zip(frames.S, frames.rho))
    base = {f.name: getattr(frames, f.name) for f in dataclasses.fields(Frames)}
    base["S"] = Sp
    return TransformedFrames(**base, spec=spec)


def untransform_frames(frames: TransformedFrames) -> Frames:
    keep = _support(frames)
    S = tuple(_shift(Sp, r, -frames.spec.signed_k, keep) for Sp, r in zip(frames.S, frames.rho))
    return _with_phase(frames, S)


def _with_phase(frames: Frames, S: tuple) -> Frames:
    return Frames(frames.grid, S, frames.rho, frames.dt, frames.mask, frames.hbar, frames.mass, frames.slope)


# --------------------------------------------------------------------------- residual building blocks

def hj_like(frames: Frames, V, signed_k: float, q_multiplier: float, q_form: str) -> np.ndarray:
    """``dT/dt + |grad T|^2/2m + (signed_k/2m) lap T + V + q_multiplier * Q``."""
    g, m = frames.grid, frames.mass
    T = frames.S_mid
    r = frames.dS_dt + frames.grad(T.values).norm2().values / (2 * m) + _as_values(V, g)
    if signed_k:
        r = r + signed_k / (2 * m) * divergence(frames.grad(T.values)).values
    if q_multiplier:
        q = quantum_potential(frames.rho_mid, q_form, frames.hbar, m, mask=support_mask(frames.rho_mid))
        r = r + q_multiplier * q.values
    return r


def density_flow(frames: Frames, signed_k: float) -> np.ndarray:
    """``drho/dt + div(rho grad T/m) - (signed_k/2m) lap rho``."""
    g, m = frames.grid, frames.mass
    flux = frames.grad(frames.S[1]).values * frames.rho[1] / m
    r = frames.drho_dt + divergence(VectorField(g, flux)).values
    if signed_k:
        r = r - signed_k / (2 * m) * laplacian(frames.rho_mid).values
    return r


def lagrangian_acceleration(frames: Frames, signed_k: float) -> np.ndarray:
    """``[d/dt + u.grad + (signed_k/2m) lap] u`` with ``u = grad T / m``; shape (ndim, ...)."""
    g, m = frames.grid, frames.mass
    u = [frames.grad(S).values / m for S in frames.S]
    out = (u[2] - u[0]) / (2 * frames.dt)
    um = u[1]
    for i in range(g.ndim):
        comp = ScalarField(g, um[i])
        grad_i = gradient(comp).values
        out[i] = out[i] + np.sum(um * grad_i, axis=0)
        if signed_k:
            out[i] = out[i] + signed_k / (2 * m) * laplacian(comp).values
    return out


def force_terms(frames: Frames, V, q_multiplier: float, q_form: str) -> np.ndarray:
    """``(grad V + q_multiplier * grad Q) / m``; shape (ndim, ...)."""
    g, m = frames.grid, frames.mass
    f = gradient(ScalarField(g, np.array(_as_values(V, g)))).values
    if q_multiplier:
        q = quantum_potential(frames.rho_mid, q_form, frames.hbar, m, mask=support_mask(frames.rho_mid))
        f = f + q_multiplier * gradient(q).values
    return f / m


def _vector_report(name: str, comps: np.ndarray, frames: Frames) -> ResidualReport:
    # acceleration stencils reach one site further than the scalar residuals
    mag = np.sqrt(np.sum(comps ** 2, axis=0))
    return ResidualReport.build(name, mag, frames.grid, erode(frames.mask, frames.grid, 1))


# --------------------------------------------------------------------------- public residuals

def transformed_hj_residual(frames, spec: TransformSpec, V=None, index: Optional[int] = None,
                            q_form: str = "third", q_multiplier: float = 2.0) -> ResidualReport:
    """Residual of ``dS'/dt + |grad S'|^2/2m + sign (k/2m) lap S' + V + 2Q``.

    ``frames`` holds the transformed phase (see :func:`transform_frames`); a
    raw trajectory plus ``index`` is also accepted and transformed here.
    """
    if not isinstance(frames, Frames):
        if V is None:
            V = frames.potential
        frames = transform_frames(_frames(frames, index), spec)
    r = hj_like(frames, V, spec.signed_k, q_multiplier, q_form)
    return ResidualReport.build(f"transformedHJ[{spec.direction}]", r, frames.grid, frames.mask)


def fokker_planck_residual(frames, spec: TransformSpec, index: Optional[int] = None) -> ResidualReport:
    """Residual of ``drho/dt + div(rho grad S'/m) - sign (k/2m) lap rho``."""
    if not isinstance(frames, Frames):
        frames = transform_frames(_frames(frames, index), spec)
    r = density_flow(frames, spec.signed_k)
    return ResidualReport.build(f"fokkerPlanck[{spec.direction}]", r, frames.grid, frames.mask)


def stochastic_acceleration(frames: Frames, spec: TransformSpec, V=None,
                            q_multiplier: float = 2.0, q_form: str = "third") -> ResidualReport:
    """``D grad S'/m + (grad V + q_multiplier grad Q)/m`` as a magnitude field."""
    r = lagrangian_acceleration(frames, spec.signed_k) + force_terms(frames, V, q_multiplier, q_form)
    return _vector_report(f"stochasticAcceleration[{spec.direction}]", r, frames)


# --------------------------------------------------------------------------- classical transformations

# case -> (sign of the phase shift, True if the source density obeys a diffusion equation)
_CASES = {1: (+1, True), 2: (-1, True), 3: (+1, False), 4: (-1, False)}


@dataclass
class ClassicalTransformResult:
    case: int
    frames: Frames
    reports: dict


def _classical_case(frames: Frames, V, signed_k: float, source_diffuses: bool,
                    q_form: str, case: int) -> ClassicalTransformResult:
    keep = _support(frames)
    T = tuple(_shift(S, r, signed_k, keep) for S, r in zip(frames.S, frames.rho))
    tf = _with_phase(frames, T)
    hj = hj_like(tf, V, signed_k, 1.0, q_form)
    # sources that already diffuse become deterministic; deterministic ones start to diffuse
    dens = density_flow(tf, 0.0 if source_diffuses else signed_k)
    acc = lagrangian_acceleration(tf, signed_k) + force_terms(tf, V, 1.0, q_form)
    reports = {
        "sourceHJ": ResidualReport.build("classicalHJ", hj_like(frames, V, 0.0, 0.0, q_form),
                                         frames.grid, frames.mask),
        "targetHJ": ResidualReport.build("quantumLikeHJ", hj, frames.grid, frames.mask),
        "targetDensity": ResidualReport.build(
            "continuity" if source_diffuses else "fokkerPlanck", dens, frames.grid, frames.mask),
        "targetAcceleration": _vector_report("bohmLikeAcceleration", acc, frames),
    }
    return ClassicalTransformResult(case, tf, reports)


def classical_transform(frames: Frames, which: int, V=None, k: Optional[float] = None,
                        q_form: str = "log_laplacian") -> ClassicalTransformResult:
    """Transform a classical (phase, density) pair into its quantum-like form.

    Cases 1 and 2 take a phase obeying the classical HJ equation with a
    retro (1) or forward (2) diffusing density and shift it by ``+-(k/2) log rho``;
    the targets are a single-Q quantum-like HJ equation and plain continuity.
    Cases 3 and 4 start from a deterministic classical pair; the targets are
    the single-Q quantum-like HJ equation and a forward (3) or retro (4)
    Fokker-Planck equation.  ``k`` defaults to ``frames.hbar``.
    """
    if which not in _CASES:
        raise ValueError("classical transformation index must be 1, 2, 3 or 4")
    k = frames.hbar if k is None else float(k)
    if not k > 0:
        raise ValueError("k must be positive")
    sign, diffuses = _CASES[which]
    return _classical_case(frames, V, sign * k, diffuses, q_form, which)


def mirrored_case(frames: Frames, which: int, V=None, k: Optional[float] = None,
                  q_form: str = "log_laplacian") -> ClassicalTransformResult:
    """``which`` evaluated with every k-term sign flipped (case 3 <-> 4, 1 <-> 2)."""
    k = frames.hbar if k is None else float(k)
    sign, diffuses = _CASES[which]
    return _classical_case(frames, V, -sign * k, diffuses, q_form, which)


# --------------------------------------------------------------------------- Nelson averaging

def nelson_average(forward: TransformedFrames, retro: TransformedFrames) -> Frames:
    """Mean of a forward- and a retro-transformed phase bundle."""
    if forward.spec is None or retro.spec is None:
        raise ValueError("both bundles must carry their transformation spec")
    if forward.spec.k != retro.spec.k:
        raise ValueError("forward and retro phases use different diffusion constants")
    if forward.spec.direction == retro.spec.direction:
        raise ValueError("Nelson averaging needs one forward and one retro phase")
    S = tuple(0.5 * (a + b) for a, b in zip(forward.S, retro.S))
    return _with_phase(forward, S)


def nelson_residuals(forward: TransformedFrames, retro: TransformedFrames, V=None,
                     q_form: str = "sqrt") -> dict:
    """Averaged equations plus the Bohm acceleration field.

    ``pairedAcceleration`` measures the mean of the retrocausal derivative of
    the forward velocity and the forward-causal derivative of the retro
    velocity against ``-(grad Q + grad V)/m``.
    """
    if forward.spec.direction != FORWARD:
        forward, retro = retro, forward
    avg = nelson_average(forward, retro)
    g = avg.grid
    kf, kr = forward.spec.signed_k, retro.spec.signed_k
    fp_mean = 0.5 * (density_flow(forward, kf) + density_flow(retro, kr))
    bohm = -force_terms(avg, V, 1.0, q_form)
    paired = 0.5 * (lagrangian_acceleration(forward, kf) + lagrangian_acceleration(retro, kr))
    return {
        "averagedFokkerPlanck": ResidualReport.build("averagedFokkerPlanck", fp_mean, g, avg.mask),
        "continuity": ResidualReport.build("continuity", density_flow(avg, 0.0), g, avg.mask),
        "quantumHJ": ResidualReport.build("quantumHJ", hj_like(avg, V, 0.0, 1.0, q_form), g, avg.mask),
        "bohmAcceleration": _vector_report("bohmAcceleration", bohm, avg),
        "pairedAcceleration": _vector_report("pairedAccelerationMinusBohm", paired - bohm, avg),
    }


# --------------------------------------------------------------------------- half-Q duality

@dataclass
class DualityReport:
    reports: dict
    q_norm_l2: float
    q_norm_max: float
    hbar: float
    mass: float
    k: float

    def to_dict(self) -> dict:
        return {
            "residuals": {k: v.to_dict() for k, v in self.reports.items()},
            "maskedQ": {"l2": self.q_norm_l2, "maxAbs": self.q_norm_max},
            "classicalOverQ": self.reports["classicalHJ"].masked_l2 / self.q_norm_l2
            if self.q_norm_l2 > 0 else None,
            "config": {"hbar": self.hbar, "mass": self.mass, "k": self.k},
        }


def half_q_duality_check(source, V=None, index: Optional[int] = None,
                         q_form: str = "log_laplacian") -> DualityReport:
    """Full-Q and half-Q transformed residuals next to the reverse-transformed classical ones.

    This is bookkeeping, not a pass/fail identity: for a genuine quantum state
    the classical residual equals ``-Q`` rather than zero.
    """
    if not isinstance(source, Frames):
        if V is None:
            V = source.potential
        source = _frames(source, index)
    spec = TransformSpec(FORWARD, source.hbar)
    tf = transform_frames(source, spec)
    back = untransform_frames(tf)
    g = source.grid
    sk = spec.signed_k
    rep = {
        "fullQ_HJ": ResidualReport.build("fullQ_HJ", hj_like(tf, V, sk, 2.0, q_form), g, source.mask),
        "halfQ_HJ": ResidualReport.build("halfQ_HJ", hj_like(tf, V, sk, 1.0, q_form), g, source.mask),
        "fullQ_acceleration": _vector_report(
            "fullQ_acceleration", lagrangian_acceleration(tf, sk) + force_terms(tf, V, 2.0, q_form), tf),
        "halfQ_acceleration": _vector_report(
            "halfQ_acceleration", lagrangian_acceleration(tf, sk) + force_terms(tf, V, 1.0, q_form), tf),
        "fokkerPlanck": ResidualReport.build("fokkerPlanck", density_flow(tf, sk), g, source.mask),
        "classicalHJ": ResidualReport.build("classicalHJ", hj_like(back, V, 0.0, 0.0, q_form), g, source.mask),
        "continuity": ResidualReport.build("continuity", density_flow(back, 0.0), g, source.mask),
    }
    q = quantum_potential(source.rho_mid, q_form, source.hbar, source.mass,
                          mask=support_mask(source.rho_mid))
    qrep = ResidualReport.build("Q", q.values, g, source.mask)
    return DualityReport(rep, qrep.masked_l2, qrep.masked_max, source.hbar, source.mass, spec.k)


# --------------------------------------------------------------------------- analytic classical families

def _gaussian(x: np.ndarray, centre, var: float) -> np.ndarray:
    return np.exp(-((x - centre) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var)


def free_flow_frames(grid: Grid, t: float, dt: float, momentum: float = 0.5, width: float = 3.0,
                     start: float = 0.0, mass: float = 1.0, hbar: float = 1.0,
                     diffusion: float = 0.0) -> Frames:
    """Uniform classical flow ``S = p x - p^2 t / 2m`` carrying a Gaussian density.

    ``diffusion`` adds ``diffusion * t / m`` to the variance, which makes the
    density obey a forward (positive) or retro (negative) Fokker-Planck
    equation with the same drift; 0 gives plain continuity.
    """
    if grid.ndim != 1:
        raise ValueError("the analytic flow families are one-dimensional")
    x = grid.axis(0)
    Ss, rhos = [], []
    for s in (t - dt, t, t + dt):
        var = width ** 2 + diffusion * s / mass
        if var <= 0:
            raise ValueError("variance became non-positive; shorten the time window")
        Ss.append(momentum * x - momentum ** 2 * s / (2 * mass))
        rhos.append(_gaussian(x, start + momentum * s / mass, var))
    masks = [support_mask(r) for r in rhos]
    return Frames(grid, tuple(Ss), tuple(rhos), dt, analysis_mask(masks, grid), hbar, mass)


def harmonic_flow_frames(grid: Grid, t: float, dt: float, omega: float = 1.0, width: float = 1.0,
                         mass: float = 1.0, hbar: float = 1.0) -> Frames:
    """Focusing classical flow in ``V = m omega^2 x^2 / 2``.

    ``S = -(m omega/2) x^2 tan(omega t)`` solves the classical HJ equation and
    the Gaussian width ``width * cos(omega t)`` is carried by its velocity field;
    valid for ``|omega t| < pi/2``.
    """
    x = grid.axis(0)
    Ss, rhos = [], []
    for s in (t - dt, t, t + dt):
        c = np.cos(omega * s)
        if c <= 0:
            raise ValueError("harmonic flow is only defined before the focal time")
        Ss.append(-0.5 * mass * omega * x ** 2 * np.tan(omega * s))
        rhos.append(_gaussian(x, 0.0, (width * c) ** 2))
    masks = [support_mask(r) for r in rhos]
    return Frames(grid, tuple(Ss), tuple(rhos), dt, analysis_mask(masks, grid), hbar, mass)
