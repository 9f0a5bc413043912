"""Dynamic programming on the transformed phase.

* Backward induction: the transformed phase is rebuilt one time level at a
  time from ``S'(x, t) = E[S'(x + dx, t + dt)] - (D S'/Dt)(x, t) dt`` with a
  Monte-Carlo kernel average, either keeping the quantum-potential term
  (``full``) or dropping it (``classical``).
* Stochastic acceleration residuals and the kernel-averaged ``grad Q``.
* The backward sub-ensemble matrix step.
* Value iteration and policy iteration on finite MDPs.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import rng
from .lattice import Grid, ScalarField, gradient
from .madelung import (Frames, ResidualReport, analysis_mask, erode, phase_gradient, phase_history,
                       quantum_potential, density, support_mask)
from .particles import KernelSpec, expectation_estimator
from .transforms import TransformSpec, stochastic_acceleration

FULL = "fullDerivative"
CLASSICAL = "classicalOnly"


# --------------------------------------------------------------------------- Lagrangians

@dataclass
class LagrangianDecomposition:
    """``L = free_1(x1) + free_2(x2) + interaction(x1, x2)`` anchored at a reference site."""

    free_1: np.ndarray
    free_2: np.ndarray
    interaction: ScalarField
    reference: tuple


def classical_lagrangian(Sp: ScalarField, V, mass: float = 1.0) -> ScalarField:
    """``|grad S'|^2 / 2m - V`` sitewise."""
    v = V.values(Sp.grid) if hasattr(V, "values") and callable(V.values) else (
        V.values if isinstance(V, ScalarField) else np.broadcast_to(np.asarray(V, float), Sp.grid.shape))
    return ScalarField(Sp.grid, gradient(Sp).norm2().values / (2 * mass) - v)


def decompose_lagrangian(L: ScalarField, reference=None) -> LagrangianDecomposition:
    """Split a two-coordinate Lagrangian into single-coordinate parts and a remainder.

    With anchor ``r``: ``free_1(x1) = L(x1, r2) - L(r1, r2)/2``,
    ``free_2(x2) = L(r1, x2) - L(r1, r2)/2`` and the interaction is what is
    left.  The interaction vanishes identically for separable ``L``.
    """
    if L.grid.ndim != 2:
        raise ValueError("decomposition needs a two-coordinate configuration grid")
    vals = L.values
    if reference is None:
        reference = tuple(s // 2 for s in vals.shape)
    r1, r2 = reference
    anchor = vals[r1, r2]
    f1 = vals[:, r2] - 0.5 * anchor
    f2 = vals[r1, :] - 0.5 * anchor
    inter = vals - f1[:, None] - f2[None, :]
    return LagrangianDecomposition(f1, f2, ScalarField(L.grid, inter), (r1, r2))


# --------------------------------------------------------------------------- field history

@dataclass
class FieldHistory:
    """Transformed phase, density and quantum potential at equally spaced times."""

    grid: Grid
    times: list
    Sp: list
    rho: list
    Q: list
    masks: list
    V: np.ndarray
    hbar: float = 1.0
    mass: float = 1.0
    k: float = 1.0
    slopes: list = None

    @property
    def dt(self) -> float:
        return self.times[1] - self.times[0]


def field_history(trajectory, spec: Optional[TransformSpec] = None, q_form: str = "sqrt") -> FieldHistory:
    """Extract time-continuous ``S'``, ``rho`` and ``Q`` from every snapshot."""
    spec = spec or TransformSpec("forward", trajectory.hbar)
    phases, masks, slopes = phase_history(trajectory)
    g = trajectory.grid
    Sps, rhos, Qs, keep = [], [], [], []
    for S, m, psi in zip(phases, masks, trajectory.psis):
        r = density(psi).values
        sm = m & support_mask(r)
        Sps.append(np.where(sm, S + 0.5 * spec.signed_k * np.log(np.maximum(r, 1e-300)), 0.0))
        rhos.append(r)
        Qs.append(quantum_potential(ScalarField(g, r), q_form, trajectory.hbar, trajectory.mass, sm).values)
        keep.append(sm)
    return FieldHistory(g, list(trajectory.times), Sps, rhos, Qs, keep,
                        trajectory.potential.values(g), trajectory.hbar, trajectory.mass, spec.k, slopes)


# --------------------------------------------------------------------------- backward induction

@dataclass(frozen=True)
class BackwardScheme:
    mode: str = FULL
    samples_per_site: int = 256
    antithetic: bool = True
    dt: Optional[float] = None

    def __post_init__(self):
        if self.mode not in (FULL, CLASSICAL):
            raise ValueError(f"mode must be {FULL!r} or {CLASSICAL!r}")
        if self.samples_per_site < 16:
            raise ValueError("at least 16 samples per site are required")


@dataclass
class BackwardResult:
    reconstructed: ScalarField
    valid: np.ndarray
    deviation_max: float
    deviation_l2: float
    valid_counts: list
    mode: str
    samples: int
    start_index: int

    def to_dict(self) -> dict:
        return {"mode": self.mode, "samplesPerSite": self.samples, "startIndex": self.start_index,
                "maskedMaxDeviation": self.deviation_max, "maskedL2Deviation": self.deviation_l2,
                "validSitesPerLevel": self.valid_counts}


def _valid_interval(valid: np.ndarray) -> tuple:
    idx = np.flatnonzero(valid)
    return idx[0], idx[-1]


def backward_value_propagation(history: FieldHistory, scheme: BackwardScheme, start_index: int = 0,
                               seed: int = 0, terminal: Optional[np.ndarray] = None,
                               workers: int = 1) -> BackwardResult:
    """Rebuild ``S'`` at ``history.times[start_index]`` from the last snapshot.

    One-dimensional grids only.  At each level the kernel is
    ``N(grad S'/m dt, (k/m) dt)`` around every site, using the stored fields
    of that level for the drift and the Lagrangian term.  A site becomes
    undefined when any of its samples leaves the interval on which the next
    level is defined; the number of defined sites per level is reported.
    Site ``i`` always reads stream ``i`` of the level, so the result does not
    depend on ``workers``.
    """
    g = history.grid
    if g.ndim != 1:
        raise NotImplementedError("backward reconstruction is implemented for 1D grids")
    last = len(history.times) - 1
    if not 0 <= start_index < last:
        raise ValueError("start_index must precede the final snapshot")
    dt = history.dt
    if scheme.dt is not None and abs(scheme.dt - dt) > 1e-12 * max(1.0, dt):
        raise ValueError(f"scheme time step {scheme.dt} differs from the snapshot spacing {dt}")
    x = g.axis(0)
    m, k = history.mass, history.k
    sd = np.sqrt(k / m * dt)
    M = scheme.samples_per_site
    value = np.array(history.Sp[last] if terminal is None else terminal, dtype=float)
    valid = history.masks[last].copy()
    counts = [int(valid.sum())]
    for level in range(last - 1, start_index - 1, -1):
        lo, hi = _valid_interval(valid)
        spline = CubicSpline(x[lo:hi + 1], value[lo:hi + 1])
        slope = history.slopes[level] if history.slopes else ()
        grad = phase_gradient(g, history.Sp[level], slope).values[0]
        lagr = grad ** 2 / (2 * m) - history.V
        if scheme.mode == FULL:
            lagr = lagr - 2.0 * history.Q[level]
        if scheme.antithetic:
            z = rng.normals(seed, 0, g.points[0], level, rng.TAG_SITE, -(-M // 2))
            z = np.concatenate([z, -z], axis=1)[:, :M]
        else:
            z = rng.normals(seed, 0, g.points[0], level, rng.TAG_SITE, M)
        pts = x[:, None] + grad[:, None] / m * dt + sd * z
        inside = np.all((pts >= x[lo]) & (pts <= x[hi]), axis=1)
        ok = history.masks[level] & inside
        mean = _site_means(spline, pts, ok, workers)
        value = np.where(ok, mean - lagr * dt, 0.0)
        # keep only the contiguous run that contains the density peak
        ok = _largest_run(ok)
        value = np.where(ok, value, 0.0)
        valid = ok
        counts.append(int(valid.sum()))
    target = history.Sp[start_index]
    cmp = valid & analysis_mask([history.masks[start_index]], g)
    dev = np.where(cmp, value - target, 0.0)
    return BackwardResult(ScalarField(g, value), valid, float(np.max(np.abs(dev))) if cmp.any() else 0.0,
                          float(np.sqrt(np.sum(dev ** 2) * g.cell_volume)), counts, scheme.mode, M, start_index)


SITE_CHUNK = 64


def _site_means(spline, pts: np.ndarray, ok: np.ndarray, workers: int) -> np.ndarray:
    def work(lo, hi):
        out = np.zeros(hi - lo)
        sel = ok[lo:hi]
        if sel.any():
            out[sel] = spline(pts[lo:hi][sel]).mean(axis=1)
        return out

    bounds = [(lo, min(lo + SITE_CHUNK, len(ok))) for lo in range(0, len(ok), SITE_CHUNK)]
    if workers <= 1:
        return np.concatenate([work(*b) for b in bounds])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(lambda b: work(*b), bounds)))


def _largest_run(ok: np.ndarray) -> np.ndarray:
    if not ok.any():
        raise ValueError("backward reconstruction lost every site")
    edges = np.diff(np.concatenate([[0], ok.astype(int), [0]]))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    best = int(np.argmax(stops - starts))
    out = np.zeros_like(ok)
    out[starts[best]:stops[best]] = True
    return out


# --------------------------------------------------------------------------- accelerations

def stochastic_acceleration_residual(frames: Frames, spec: TransformSpec, V=None,
                                     q_form: str = "third") -> ResidualReport:
    """``[d/dt + u.grad + sign(k/2m) lap] u + (grad V + 2 grad Q)/m`` with ``u = grad S'/m``."""
    return stochastic_acceleration(frames, spec, V, 2.0, q_form)


def kernel_averaged_force(rho: ScalarField, points: Sequence, kernel: KernelSpec, n_samples: int,
                          seed: int, hbar: float = 1.0, mass: float = 1.0, q_form: str = "sqrt") -> list:
    """``E[grad Q(x0 + dx)]`` next to ``grad Q(x0)`` for each point (measurement only)."""
    mask = support_mask(rho)
    Q = quantum_potential(rho, q_form, hbar, mass, mask)
    inner = erode(mask, rho.grid, 3)
    gq = gradient(Q).values
    out = []
    for i, x0 in enumerate(points):
        row = {"x0": list(np.atleast_1d(x0).astype(float))}
        for a in range(rho.grid.ndim):
            est = expectation_estimator(ScalarField(rho.grid, np.where(inner, gq[a], 0.0)), x0, kernel,
                                        n_samples, seed + i, mask=inner, antithetic=True)
            site = tuple(int(np.argmin(np.abs(rho.grid.axis(b) - np.atleast_1d(x0)[b])))
                         for b in range(rho.grid.ndim))
            row[f"axis{a}"] = {"kernelMean": est.mean, "standardError": est.standard_error,
                               "pointValue": float(gq[a][site]), "rejectedFraction": est.rejected_fraction}
        out.append(row)
    return out


# --------------------------------------------------------------------------- sub-ensemble matrices

class IllConditionedError(ValueError):
    pass


@dataclass
class SubEnsembleState:
    T: np.ndarray
    X: np.ndarray
    v: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=float)
        n = self.T.shape[0]
        if self.T.shape != (n, n):
            raise ValueError("transition matrix must be square")
        if n > 64:
            raise ValueError("the sub-ensemble demonstration is limited to 64 states")
        if np.any(self.T < -1e-15) or np.max(np.abs(self.T.sum(axis=1) - 1)) > 1e-12:
            raise ValueError("transition matrix must be row-stochastic")
        for name in ("X", "v", "a"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape[0] != n:
                raise ValueError(f"{name} has the wrong length for this transition matrix")
            setattr(self, name, arr)

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.T))


def subensemble_backward_step(state: SubEnsembleState, dt: float, max_condition: float = 1e8) -> SubEnsembleState:
    """``X(t) = T^-1 (X(t+dt) - v dt + a dt^2)``, ``v(t) = T^-1 (v(t+dt) - a dt)``."""
    cond = state.condition
    if not np.isfinite(cond) or cond > max_condition:
        raise IllConditionedError(f"transition matrix condition number {cond:.3e} exceeds {max_condition:.1e}")
    X = np.linalg.solve(state.T, state.X - state.v * dt + state.a * dt * dt)
    v = np.linalg.solve(state.T, state.v - state.a * dt)
    return SubEnsembleState(state.T, X, v, state.a)


def subensemble_forward_step(state: SubEnsembleState, dt: float) -> SubEnsembleState:
    """Inverse of :func:`subensemble_backward_step`: ``v' = T v + a dt``, ``X' = T X + v' dt - a dt^2``."""
    v = state.T @ state.v + state.a * dt
    X = state.T @ state.X + v * dt - state.a * dt * dt
    return SubEnsembleState(state.T, X, v, state.a)


# --------------------------------------------------------------------------- finite MDPs

@dataclass
class LatticeMDP:
    """Finite MDP.

    ``P[a, s, s']`` transition probabilities, ``R[s, a]`` rewards,
    ``available[s, a]`` marks legal actions and ``terminal[s]`` absorbing
    zero-value states.
    """

    P: np.ndarray
    R: np.ndarray
    gamma: float
    available: Optional[np.ndarray] = None
    terminal: Optional[np.ndarray] = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        A, S, S2 = self.P.shape
        if S != S2 or self.R.shape != (S, A):
            raise ValueError("P must be (A, S, S) and R must be (S, A)")
        if S > 10_000:
            raise ValueError("MDPs are capped at 10^4 states")
        if self.available is None:
            self.available = np.ones((S, A), dtype=bool)
        if self.terminal is None:
            self.terminal = np.zeros(S, dtype=bool)
        self.available = np.asarray(self.available, dtype=bool)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if self.gamma == 1.0 and not self.terminal.any():
            raise ValueError("an undiscounted MDP needs terminal states")
        rows = self.P.sum(axis=2).T  # (S, A)
        live = self.available & ~self.terminal[:, None]
        if np.any(np.abs(rows[live] - 1.0) > 1e-12) or np.any(self.P < 0):
            raise ValueError("transition rows of available actions must be probability vectors")
        if not np.all(self.available[~self.terminal].any(axis=1)):
            raise ValueError("every non-terminal state needs an available action")

    @property
    def n_states(self) -> int:
        return self.P.shape[1]

    @property
    def n_actions(self) -> int:
        return self.P.shape[0]

    def q_values(self, V: np.ndarray) -> np.ndarray:
        q = self.R + self.gamma * np.einsum("ast,t->sa", self.P, V)
        q = np.where(self.available, q, -np.inf)
        q[self.terminal] = 0.0
        return q

    def to_json(self) -> str:
        trans = [[int(a), int(s), int(t), float(self.P[a, s, t])]
                 for a, s, t in zip(*np.nonzero(self.P))]
        rewards = [[int(s), int(a), float(self.R[s, a])] for s in range(self.n_states)
                   for a in range(self.n_actions) if self.available[s, a]]
        doc = {"states": self.n_states, "actions": self.n_actions, "gamma": self.gamma,
               "transitions": trans, "rewards": rewards,
               "available": self.available.astype(int).tolist(),
               "terminal": [int(s) for s in np.flatnonzero(self.terminal)]}
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "LatticeMDP":
        d = json.loads(text)
        S, A = int(d["states"]), int(d["actions"])
        P = np.zeros((A, S, S))
        for a, s, t, p in d["transitions"]:
            P[int(a), int(s), int(t)] = float(p)
        R = np.zeros((S, A))
        for s, a, r in d["rewards"]:
            R[int(s), int(a)] = float(r)
        term = np.zeros(S, dtype=bool)
        term[list(map(int, d.get("terminal", [])))] = True
        avail = np.asarray(d["available"], dtype=bool) if "available" in d else None
        return cls(P, R, float(d["gamma"]), avail, term)

    @classmethod
    def load(cls, path) -> "LatticeMDP":
        return cls.from_json(Path(path).read_text())


def random_mdp(n_states: int, n_actions: int, gamma: float, seed: int) -> LatticeMDP:
    gen = rng.generator(seed, 0, 0, rng.TAG_POLICY)
    P = gen.dirichlet(np.ones(n_states), size=(n_actions, n_states))
    P /= P.sum(axis=2, keepdims=True)
    R = gen.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return LatticeMDP(P, R, gamma)


def greedy_policy(mdp: LatticeMDP, V: np.ndarray, tie_tol: float = 1e-9) -> np.ndarray:
    """Lowest-index action within ``tie_tol`` of the best one-step lookahead."""
    q = mdp.q_values(V)
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - tie_tol, axis=1)


@dataclass
class SolverResult:
    values: np.ndarray
    policy: np.ndarray
    iterations: int
    contraction_ratios: list = field(default_factory=list)
    certified: bool = True
    accepted_changes: int = 0
    contraction_holds: bool = True


def value_iteration(mdp: LatticeMDP, tol: float = 1e-10, max_iter: int = 100_000) -> SolverResult:
    """Bellman optimality iteration until successive values differ by at most ``tol``.

    ``contraction_ratios`` holds successive sup-norm difference ratios.
    ``contraction_holds`` checks ``d_k <= (gamma + 1e-12) d_{k-1} + r`` where
    ``r`` bounds the rounding error of one Bellman update.
    """
    V = np.zeros(mdp.n_states)
    ratios, prev_diff, holds = [], None, True
    eps = np.finfo(float).eps
    for it in range(1, max_iter + 1):
        V_new = mdp.q_values(V).max(axis=1)
        diff = float(np.max(np.abs(V_new - V)))
        if prev_diff is not None and prev_diff > 0:
            ratios.append(diff / prev_diff)
            rounding = 4 * mdp.n_states * eps * (np.max(np.abs(mdp.R)) + np.max(np.abs(V_new)))
            holds &= diff <= (mdp.gamma + 1e-12) * prev_diff + rounding
        V, prev_diff = V_new, diff
        if diff <= tol:
            return SolverResult(V, greedy_policy(mdp, V), it, ratios, contraction_holds=bool(holds))
    raise RuntimeError("value iteration did not converge")


def evaluate_policy(mdp: LatticeMDP, policy: np.ndarray) -> np.ndarray:
    """Exact values of a deterministic policy via a dense linear solve."""
    S = mdp.n_states
    idx = np.arange(S)
    Pp = mdp.P[policy, idx, :]
    Rp = mdp.R[idx, policy]
    live = ~mdp.terminal
    A = np.eye(S) - mdp.gamma * Pp * live[:, None]
    b = np.where(live, Rp, 0.0)
    return np.linalg.solve(A, b)


def _initial_policy(mdp: LatticeMDP) -> np.ndarray:
    return np.argmax(mdp.available, axis=1)


def policy_iteration(mdp: LatticeMDP, improvement: str = "exactGreedy", seed: int = 0,
                     proposals_per_state: int = 2, patience: int = 25,
                     max_iter: int = 10_000, tol: float = 1e-12) -> SolverResult:
    """Alternate exact evaluation with greedy or randomized accept-reject improvement.

    The randomized variant proposes ``proposals_per_state`` random legal
    actions per state each sweep and accepts a proposal only if it strictly
    beats the incumbent's one-step lookahead.  It stops after ``patience``
    sweeps without an acceptance; ``certified`` then records whether the final
    policy is greedy with respect to its own values.
    """
    if improvement not in ("exactGreedy", "randomizedAcceptReject"):
        raise ValueError(f"unknown improvement rule {improvement!r}")
    pi = _initial_policy(mdp)
    S = mdp.n_states
    accepted_total = 0
    quiet = 0
    for it in range(1, max_iter + 1):
        V = evaluate_policy(mdp, pi)
        q = mdp.q_values(V)
        current = q[np.arange(S), pi]
        if improvement == "exactGreedy":
            best = greedy_policy(mdp, V, 0.0)
            better = q[np.arange(S), best] > current + tol
            if not better.any():
                return SolverResult(V, pi, it, accepted_changes=accepted_total)
            pi = np.where(better, best, pi)
            accepted_total += int(better.sum())
            continue
        gen = rng.generator(seed, it, 0, rng.TAG_POLICY)
        changed = 0
        new_pi = pi.copy()
        for s in range(S):
            legal = np.flatnonzero(mdp.available[s])
            if mdp.terminal[s] or legal.size < 2:
                continue
            for a in gen.choice(legal, size=proposals_per_state):
                if q[s, a] > q[s, new_pi[s]] + tol:
                    new_pi[s] = a
                    changed += 1
        accepted_total += changed
        pi = new_pi
        quiet = 0 if changed else quiet + 1
        if quiet >= patience:
            V = evaluate_policy(mdp, pi)
            q = mdp.q_values(V)
            certified = bool(np.all(q.max(axis=1) <= q[np.arange(S), pi] + 1e-9))
            return SolverResult(V, pi, it, certified=certified, accepted_changes=accepted_total)
    raise RuntimeError("policy iteration did not terminate")


def seed_averaged_values(mdp: LatticeMDP, seeds: Sequence[int], proposals_per_state: int = 1,
                         patience: int = 3) -> dict:
    """Average the value functions found by short randomized accept-reject runs over seeds."""
    runs = [policy_iteration(mdp, "randomizedAcceptReject", s, proposals_per_state, patience) for s in seeds]
    values = np.stack([r.values for r in runs])
    optimum = value_iteration(mdp).values
    return {"mean": values.mean(axis=0), "spread": values.std(axis=0),
            "gapToOptimum": float(np.max(np.abs(values.mean(axis=0) - optimum))),
            "certifiedFraction": float(np.mean([r.certified for r in runs]))}
