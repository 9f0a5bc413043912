"""Pilot-wave particle ensembles, equivariance metrics and kernel expectations.

Every random draw comes from :mod:`qhjb.rng`, addressed by particle index,
step index and a purpose tag under the master seed, so trajectories are
bitwise reproducible for any worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.special import erf

from . import rng
from .lattice import Grid, ScalarField, VectorField, integrate, laplacian

CHUNK = rng.BLOCK


@dataclass(frozen=True)
class ParticleEnsemble:
    """``positions`` has shape ``(N, ndim)``."""

    grid: Grid
    positions: np.ndarray
    seed: int
    time: float = 0.0
    step_index: int = 0
    frozen: int = 0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.shape[1] != self.grid.ndim:
            raise ValueError("positions must have one column per grid axis")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)

    @property
    def size(self) -> int:
        return self.positions.shape[0]


# --------------------------------------------------------------------------- geometry helpers

def _domain(grid: Grid, axis: int):
    lo = grid.origin[axis]
    return lo, lo + grid.extent[axis]


def _confine(x: np.ndarray, grid: Grid) -> np.ndarray:
    """Wrap (periodic) or reflect (clamped) positions back into the domain."""
    out = np.array(x, dtype=float)
    for a in range(grid.ndim):
        lo, hi = _domain(grid, a)
        span = hi - lo
        col = out[:, a] - lo
        if grid.periodic:
            col = np.mod(col, span)
        else:
            col = np.mod(col, 2 * span)
            col = np.where(col > span, 2 * span - col, col)
        out[:, a] = lo + col
    return out


def _stencil(grid: Grid, x: np.ndarray):
    """Lower corner indices and fractional weights for (bi)linear interpolation."""
    idx, frac = [], []
    for a in range(grid.ndim):
        n, h = grid.points[a], grid.spacing[a]
        s = (x[:, a] - grid.origin[a]) / h
        if grid.periodic:
            i0 = np.floor(s)
            w = s - i0
            i0 = np.mod(i0.astype(np.int64), n)
            i1 = np.mod(i0 + 1, n)
        else:
            s = np.clip(s, 0.0, n - 1.0)
            i0 = np.minimum(np.floor(s).astype(np.int64), n - 2)
            w = s - i0
            i1 = i0 + 1
        idx.append((i0, i1))
        frac.append(w)
    return idx, frac


def interpolate(values: np.ndarray, grid: Grid, x: np.ndarray) -> np.ndarray:
    """Linear (1D) or bilinear (2D) interpolation of site values at points ``x``."""
    idx, frac = _stencil(grid, x)
    if grid.ndim == 1:
        (i0, i1), w = idx[0], frac[0]
        return (1 - w) * values[i0] + w * values[i1]
    (i0, i1), (j0, j1) = idx
    wx, wy = frac
    return ((1 - wx) * (1 - wy) * values[i0, j0] + wx * (1 - wy) * values[i1, j0]
            + (1 - wx) * wy * values[i0, j1] + wx * wy * values[i1, j1])


def _inside_mask(mask: np.ndarray, grid: Grid, x: np.ndarray) -> np.ndarray:
    """True when every interpolation corner of a point is masked in."""
    idx, _ = _stencil(grid, x)
    if grid.ndim == 1:
        i0, i1 = idx[0]
        return mask[i0] & mask[i1]
    (i0, i1), (j0, j1) = idx
    return mask[i0, j0] & mask[i1, j0] & mask[i0, j1] & mask[i1, j1]


def _chunked(fn, n: int, workers: int) -> np.ndarray:
    """Apply ``fn(lo, hi)`` over fixed-size chunks; chunking is independent of ``workers``."""
    bounds = [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]
    if workers <= 1 or len(bounds) == 1:
        parts = [fn(lo, hi) for lo, hi in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: fn(*b), bounds))
    return np.concatenate(parts) if parts else np.empty((0,))


# --------------------------------------------------------------------------- sampling

def _linear_cdf(rho: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid integral of ``rho`` on nodes ``x``, normalized to end at 1."""
    seg = 0.5 * (rho[1:] + rho[:-1]) * np.diff(x)
    cdf = np.concatenate([[0.0], np.cumsum(seg)])
    return cdf / cdf[-1]


def _nodes_1d(rho: ScalarField):
    """Node coordinates and density values covering the whole domain (periodic closes the loop)."""
    g = rho.grid
    x = g.axis(0)
    r = np.asarray(rho.values, dtype=float)
    if g.periodic:
        x = np.append(x, g.upper(0))
        r = np.append(r, r[0])
    return x, r


def sample_from_density(rho: ScalarField, n: int, seed: int) -> ParticleEnsemble:
    """Draw ``n`` positions by inverse-CDF sampling of the lattice density.

    1D: the density is linear between nodes, so the CDF is piecewise
    quadratic; it is inverted on the trapezoid CDF with linear interpolation.
    2D: a site is chosen with probability proportional to its mass and the
    position is spread uniformly over that site's cell.
    """
    g = rho.grid
    if g.ndim == 1:
        x, r = _nodes_1d(rho)
        u = rng.uniforms(seed, 0, n, 0, rng.TAG_SAMPLE, 1)[:, 0]
        pos = np.interp(u, _linear_cdf(np.maximum(r, 0.0), x), x)[:, None]
    else:
        mass = np.maximum(np.asarray(rho.values, dtype=float), 0.0).ravel()
        cdf = np.cumsum(mass)
        cdf /= cdf[-1]
        u = rng.uniforms(seed, 0, n, 0, rng.TAG_SAMPLE, 3)
        site = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), cdf.size - 1)
        i, j = np.unravel_index(site, g.shape)
        hx, hy = g.spacing
        pos = np.stack([g.origin[0] + hx * (i + u[:, 1] - 0.5),
                        g.origin[1] + hy * (j + u[:, 2] - 0.5)], axis=1)
        pos = _confine(pos, g)
    return ParticleEnsemble(g, pos, seed)


# --------------------------------------------------------------------------- stepping

def step_deterministic(ens: ParticleEnsemble, velocity: VectorField, dt: float,
                       mask: Optional[np.ndarray] = None, workers: int = 1) -> ParticleEnsemble:
    """Explicit Euler step ``x += v(x) dt``; particles on masked-out cells stay put."""
    return _advance(ens, velocity, dt, mask, 0.0, 1.0, workers)


def step_stochastic(ens: ParticleEnsemble, drift: VectorField, k: float, mass: float, dt: float,
                    mask: Optional[np.ndarray] = None, workers: int = 1) -> ParticleEnsemble:
    """Euler-Maruyama step ``x += drift(x) dt + sqrt(k/m) sqrt(dt) xi``.

    With ``k == 0`` the noise branch is skipped and the result equals
    :func:`step_deterministic` bit for bit.
    """
    if k < 0:
        raise ValueError("diffusion constant must be non-negative")
    return _advance(ens, drift, dt, mask, k, mass, workers)


def _advance(ens, drift, dt, mask, k, mass, workers):
    g = ens.grid
    if drift.grid != g:
        raise ValueError("drift field lives on a different grid")
    if mask is None:
        mask = np.ones(g.shape, dtype=bool)
    comps = drift.values
    scale = np.sqrt(k / mass) * np.sqrt(abs(dt)) if k > 0 else 0.0
    pos = ens.positions

    def work(lo, hi):
        x = pos[lo:hi]
        live = _inside_mask(mask, g, x)
        dx = np.stack([interpolate(comps[a], g, x) for a in range(g.ndim)], axis=1) * dt
        if scale:
            xi = rng.normals(ens.seed, lo, hi, ens.step_index, rng.TAG_NOISE, g.ndim)
            dx = dx + scale * xi
        moved = _confine(x + dx, g)
        out = np.where(live[:, None], moved, x)
        return np.concatenate([out, (~live)[:, None].astype(float)], axis=1)

    res = _chunked(work, ens.size, workers).reshape(ens.size, g.ndim + 1)
    frozen = int(res[:, -1].sum())
    return ParticleEnsemble(g, res[:, :-1], ens.seed, ens.time + dt, ens.step_index + 1, frozen)


# --------------------------------------------------------------------------- equivariance

def bin_probabilities(rho: ScalarField, bins: int) -> np.ndarray:
    """Exact cell masses of the lattice density on ``bins`` equal cells per axis."""
    g = rho.grid
    if bins < 1 or any(bins > n for n in g.points):
        raise ValueError("bins must be between 1 and the number of grid points per axis")
    if g.ndim == 1:
        x, r = _nodes_1d(rho)
        r = np.maximum(r, 0.0)
        edges = np.linspace(x[0], x[-1], bins + 1)
        # exact integral of the piecewise-linear density up to each edge
        seg = 0.5 * (r[1:] + r[:-1]) * np.diff(x)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        j = np.clip(np.searchsorted(x, edges, side="right") - 1, 0, len(x) - 2)
        t = edges - x[j]
        h = x[j + 1] - x[j]
        slope = (r[j + 1] - r[j]) / h
        at_edge = cum[j] + r[j] * t + 0.5 * slope * t * t
        at_edge /= cum[-1]
        return np.diff(at_edge)
    mass = np.maximum(np.asarray(rho.values, dtype=float), 0.0)
    cells = []
    for a in range(2):
        n = g.points[a]
        cells.append(np.minimum((np.arange(n) * bins) // n, bins - 1))
    out = np.zeros((bins, bins))
    np.add.at(out, (cells[0][:, None], cells[1][None, :]), mass)
    return (out / out.sum()).ravel()


def histogram(ens: ParticleEnsemble, bins: int) -> np.ndarray:
    """Empirical cell probabilities on the same cells as :func:`bin_probabilities`."""
    g = ens.grid
    cell_ids = []
    for a in range(g.ndim):
        lo = g.origin[a]
        hi = g.upper(a) if g.periodic else g.axis(a)[-1]
        if g.ndim == 1:
            c = np.floor((ens.positions[:, a] - lo) / (hi - lo) * bins)
        else:
            # 2D cells group whole sites; a position belongs to its nearest site's cell
            n = g.points[a]
            site = np.rint((ens.positions[:, a] - lo) / g.spacing[a]).astype(np.int64)
            site = np.mod(site, n) if g.periodic else np.clip(site, 0, n - 1)
            c = (site * bins) // n
        cell_ids.append(np.clip(c.astype(np.int64), 0, bins - 1))
    flat = cell_ids[0] if g.ndim == 1 else cell_ids[0] * bins + cell_ids[1]
    counts = np.bincount(flat, minlength=bins ** g.ndim)
    return counts / ens.size


def equivariance_distance(ens: ParticleEnsemble, rho: ScalarField, bins: int) -> float:
    """L1 distance between the particle histogram and the density's cell masses."""
    if rho.grid != ens.grid:
        raise ValueError("density and ensemble live on different grids")
    p = bin_probabilities(rho, bins)
    return float(np.sum(np.abs(histogram(ens, bins) - p)))


def multinomial_floor(p: np.ndarray, n: int) -> float:
    """Large-N expectation of the L1 histogram error for exact samples."""
    p = np.asarray(p, dtype=float)
    return float(np.sqrt(2.0 / np.pi) * np.sum(np.sqrt(p * (1 - p) / n)))


# --------------------------------------------------------------------------- kernel expectations

@dataclass(frozen=True)
class KernelSpec:
    """Gaussian step kernel with variance ``(k/m) dt`` per axis and mean ``drift * dt``."""

    dt: float
    k: float = 1.0
    mass: float = 1.0
    drift: tuple = (0.0,)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("kernel time step must be positive")
        if not self.variance > 0:
            raise ValueError("kernel variance must be positive")

    @property
    def variance(self) -> float:
        return self.k / self.mass * self.dt

    def mean_shift(self, ndim: int) -> np.ndarray:
        d = np.atleast_1d(np.asarray(self.drift, dtype=float))
        if d.size == 1:
            d = np.repeat(d, ndim)
        return d * self.dt

    def to_dict(self) -> dict:
        return {"kind": "gaussianStep", "dt": self.dt, "k": self.k, "mass": self.mass,
                "variance": self.variance, "drift": list(np.atleast_1d(self.drift).astype(float))}


@dataclass
class EstimatorResult:
    mean: float
    standard_error: float
    n_samples: int
    rejected_fraction: float
    weighted_mean: Optional[float] = None
    weighted_standard_error: Optional[float] = None
    kernel: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "standardError": self.standard_error, "nSamples": self.n_samples,
                "rejectedFraction": self.rejected_fraction, "weightedMean": self.weighted_mean,
                "weightedStandardError": self.weighted_standard_error, "kernel": self.kernel}


def spline_evaluator(f: ScalarField):
    """Cubic-spline interpolant of a lattice field, called on ``(n, ndim)`` points."""
    g = f.grid
    vals = np.asarray(f.values, dtype=float)
    if g.ndim == 1:
        x = g.axis(0)
        if g.periodic:
            x = np.append(x, g.upper(0))
            cs = CubicSpline(x, np.append(vals, vals[0]), bc_type="periodic")
            lo, span = g.origin[0], g.extent[0]
            return lambda p: cs(lo + np.mod(p[:, 0] - lo, span))
        cs = CubicSpline(x, vals)
        return lambda p: cs(p[:, 0])
    spl = RectBivariateSpline(g.axis(0), g.axis(1), vals, kx=3, ky=3)
    return lambda p: spl.ev(p[:, 0], p[:, 1])


def kernel_points(x0, kernel: KernelSpec, n: int, seed: int, ndim: int, antithetic: bool = False,
                  stream_offset: int = 0) -> np.ndarray:
    """``n`` kernel samples around ``x0``; antithetic pairs share one normal draw."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    base = x0 + kernel.mean_shift(ndim)
    sd = np.sqrt(kernel.variance)
    if antithetic:
        half = -(-n // 2)
        z = rng.normals(seed, stream_offset, stream_offset + half, 0, rng.TAG_KERNEL, ndim)
        z = np.concatenate([z, -z])[:n]
    else:
        z = rng.normals(seed, stream_offset, stream_offset + n, 0, rng.TAG_KERNEL, ndim)
    return base + sd * z


def expectation_estimator(f: ScalarField, x0, kernel: KernelSpec, n_samples: int, seed: int,
                          mask: Optional[np.ndarray] = None, rho: Optional[ScalarField] = None,
                          antithetic: bool = False) -> EstimatorResult:
    """Monte-Carlo mean of ``f(x0 + dx)`` with ``dx`` drawn from ``kernel``.

    Samples landing outside the domain or on masked-out cells are rejected
    and counted.  When ``rho`` is given the weighted form
    ``rho(x0) * E[f]`` is reported as well.
    """
    g = f.grid
    pts = kernel_points(x0, kernel, n_samples, seed, g.ndim, antithetic)
    ok = np.ones(n_samples, dtype=bool)
    if not g.periodic:
        for a in range(g.ndim):
            ok &= (pts[:, a] >= g.origin[a]) & (pts[:, a] <= g.axis(a)[-1])
    if mask is not None:
        ok &= _inside_mask(mask, g, np.where(ok[:, None], pts, g.origin))
    vals = spline_evaluator(f)(pts[ok])
    n_ok = int(ok.sum())
    if n_ok == 0:
        raise ValueError("every kernel sample was rejected")
    if antithetic and n_ok == n_samples and n_samples % 2 == 0:
        half = n_samples // 2
        pair = 0.5 * (vals[:half] + vals[half:])
        mean = float(np.mean(pair))
        se = float(np.std(pair, ddof=1) / np.sqrt(half)) if half > 1 else 0.0
    else:
        mean = float(np.mean(vals))
        se = float(np.std(vals, ddof=1) / np.sqrt(n_ok)) if n_ok > 1 else 0.0
    res = EstimatorResult(mean, se, n_samples, 1.0 - n_ok / n_samples, kernel=kernel.to_dict())
    if rho is not None:
        w = float(spline_evaluator(rho)(np.atleast_2d(np.asarray(x0, dtype=float)))[0])
        res.weighted_mean = w * mean
        res.weighted_standard_error = w * se
    return res


# --------------------------------------------------------------------------- divergence theorem

def kernel_density(kernel: KernelSpec, grid: Grid, center=None) -> ScalarField:
    """Kernel density sampled on the grid; rejects kernels with mass outside the domain."""
    c = np.zeros(grid.ndim) if center is None else np.atleast_1d(np.asarray(center, dtype=float))
    c = c + kernel.mean_shift(grid.ndim)
    sd = np.sqrt(kernel.variance)
    outside = 0.0
    inside_total = 1.0
    for a in range(grid.ndim):
        lo = grid.origin[a]
        hi = grid.upper(a) if grid.periodic else grid.axis(a)[-1]
        inside = 0.5 * (erf((hi - c[a]) / (np.sqrt(2) * sd)) - erf((lo - c[a]) / (np.sqrt(2) * sd)))
        inside_total *= inside
    outside = 1.0 - inside_total
    if outside > 1e-12:
        raise ValueError(f"kernel mass outside the grid is {outside:.3e} (> 1e-12)")
    xs = grid.coords()
    r2 = sum((x - ci) ** 2 for x, ci in zip(xs, c))
    p = np.exp(-r2 / (2 * kernel.variance)) / (2 * np.pi * kernel.variance) ** (grid.ndim / 2)
    return ScalarField(grid, p)


def kernel_divergence_integral(kernel: KernelSpec, grid: Grid, center=None) -> float:
    """``integrate(laplacian(P))`` for the kernel density ``P``."""
    return integrate(laplacian(kernel_density(kernel, grid, center)))


def summation_by_parts(f: ScalarField, kernel: KernelSpec, center=None) -> tuple:
    """Both sides of ``sum f lap(P) = sum P lap(f)``."""
    P = kernel_density(kernel, f.grid, center)
    left = integrate(ScalarField(f.grid, f.values * laplacian(P).values))
    right = integrate(ScalarField(f.grid, P.values * laplacian(f).values))
    return left, right
