"""Interacting-particle approximation of the second-order nonlinear SDE.

The scheme follows the mollified construction: coefficients are averaged
over the empirical measure, the density argument is a kernel estimate with
bandwidth tied to the mollification level (eps = c / level), and the initial
condition is truncated to the level's box. Time stepping is Euler-Maruyama
with counter-based noise streams, so trajectories are reproducible and
exchangeable by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.signal import fftconvolve
from scipy.spatial import cKDTree
from scipy.special import gammaln

from .coefficients import CoefficientSpec
from .errors import BudgetExceededError, ContractViolationError, PreconditionError
from .fields import as_anisotropy, as_exponents, reciprocal
from .fpk import GridDensity, GridGeometry
from .matrices import ellipticity_project, spd_sqrt
from .norms import mixed_lp_norm
from .rng import counter_normals

__all__ = [
    "ParticleEnsemble",
    "Mollifier",
    "initial_ensemble",
    "kde_density",
    "kde_on_grid",
    "mollified_coefficients",
    "em_step",
    "simulate",
    "SimResult",
    "wasserstein2",
    "W2Result",
    "krylov_check",
    "KrylovReport",
    "stability_sweep",
    "StabilityReport",
]

DIRECT_PAIR_BUDGET = 4e7


@dataclass
class ParticleEnsemble:
    """Phase-space sample with its noise bookkeeping.

    ``streams`` pins each particle to a counter-RNG stream; permuting
    particles together with their streams permutes trajectories exactly.
    """

    x: np.ndarray            # (N, d)
    v: np.ndarray            # (N, d)
    t: float
    seed: int
    streams: np.ndarray      # (N,) uint64
    step: int = 0
    level: int = 8

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.x.shape != self.v.shape or self.x.shape[0] < 1:
            raise ContractViolationError("ensemble needs matching (N, d) arrays, N >= 1")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise ContractViolationError("ensemble contains non-finite values")
        self.streams = np.asarray(self.streams, dtype=np.uint64)
        if self.streams.shape != (self.x.shape[0],):
            raise ContractViolationError("streams must be one id per particle")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def phase_points(self) -> np.ndarray:
        return np.hstack([self.x, self.v])

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.x.copy(), self.v.copy(), self.t, self.seed,
                                self.streams.copy(), self.step, self.level)


def _bump_normalizer(m: int) -> float:
    """1 / integral of (1-|z|^2)^4 over the unit ball in R^m."""
    # integral = pi^(m/2) * Gamma(5) / Gamma(m/2 + 5)
    log_int = 0.5 * m * np.log(np.pi) + gammaln(5.0) - gammaln(0.5 * m + 5.0)
    return float(np.exp(-log_int))


@dataclass(frozen=True)
class Mollifier:
    """Compactly supported polynomial bump (1-|z|^2)^4, unit mass, symmetric.

    ``spatial`` scales all axes by eps. ``kinetic`` scales a space-time
    argument (t, x, v) by (eps^2, eps^3, eps) and is provided for the
    anisotropic smoothing variant; density estimation uses the spatial kind.
    """

    eps: float
    m: int
    kind: str = "spatial"
    d: int = 0

    def __post_init__(self):
        if self.eps <= 0:
            raise ContractViolationError("mollifier bandwidth must be positive")
        if self.kind not in ("spatial", "kinetic"):
            raise ContractViolationError(f"unknown mollifier kind {self.kind!r}")
        if self.kind == "kinetic" and self.m != 1 + 2 * self.d:
            raise ContractViolationError("kinetic mollifier needs m = 1 + 2d")

    @classmethod
    def from_level(cls, level: int, m: int, scale: float = 2.0) -> "Mollifier":
        """Bandwidth tied to the mollification level: eps = scale / level."""
        return cls(eps=scale / float(level), m=m)

    def _axis_scales(self) -> np.ndarray:
        if self.kind == "spatial":
            return np.full(self.m, self.eps)
        d = self.d
        return np.array([self.eps**2] + [self.eps**3] * d + [self.eps] * d)

    def support_radii(self) -> np.ndarray:
        return self._axis_scales()

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        scales = self._axis_scales()
        w = z / scales
        r2 = np.sum(w * w, axis=-1)
        core = np.where(r2 < 1.0, (1.0 - np.minimum(r2, 1.0)) ** 4, 0.0)
        return _bump_normalizer(self.m) / np.prod(scales) * core


def initial_ensemble(n: int, d: int, law: dict, seed: int, level: int,
                     t0: float = 0.0) -> ParticleEnsemble:
    """Sample Z_0 from the configured law and truncate it to [-level, level].

    The truncation is componentwise clipping, applied after sampling, so
    ensembles at different levels are couplings of the same base draw.
    """
    rng = np.random.default_rng(np.random.Philox(key=seed))
    kind = law.get("type", "gaussian")
    if kind == "gaussian":
        mean = np.broadcast_to(np.asarray(law.get("mean", 0.0), dtype=float), (2 * d,))
        std = np.broadcast_to(np.asarray(law.get("std", 1.0), dtype=float), (2 * d,))
        z = mean + std * rng.standard_normal((n, 2 * d))
    elif kind == "uniform":
        lo = np.broadcast_to(np.asarray(law.get("low", -1.0), dtype=float), (2 * d,))
        hi = np.broadcast_to(np.asarray(law.get("high", 1.0), dtype=float), (2 * d,))
        z = lo + (hi - lo) * rng.random((n, 2 * d))
    else:
        raise ContractViolationError(f"unknown initial law {kind!r}")
    z = np.clip(z, -float(level), float(level))
    return ParticleEnsemble(x=z[:, :d], v=z[:, d:], t=t0, seed=seed,
                            streams=np.arange(n, dtype=np.uint64), step=0,
                            level=level)


# ---------------------------------------------------------------------------
# Density estimation
# ---------------------------------------------------------------------------

def kde_density(ens: ParticleEnsemble, query: np.ndarray,
                mollifier: Mollifier) -> np.ndarray:
    """Exact kernel estimate (1/N) sum_j Gamma_eps(q - Z_j) at each query.

    Compact support makes this a neighbor sum; a KD-tree keeps it near
    linear. Intended for moderate query counts; use kde_on_grid for full
    grids at large N.
    """
    pts = ens.phase_points()
    query = np.atleast_2d(np.asarray(query, dtype=float))
    if query.shape[1] != pts.shape[1]:
        raise ContractViolationError("query dimension does not match the ensemble")
    tree = cKDTree(pts)
    out = np.zeros(query.shape[0])
    hits = tree.query_ball_point(query, r=mollifier.eps * (1.0 + 1e-12), workers=-1)
    for i, idx in enumerate(hits):
        if idx:
            out[i] = mollifier(query[i] - pts[idx]).sum()
    return out / ens.n


def _wrap_x(x: np.ndarray, lx: float) -> np.ndarray:
    return (x + lx) % (2.0 * lx) - lx


def kde_on_grid(ens: ParticleEnsemble, geom: GridGeometry,
                mollifier: Mollifier, renormalize: bool = True) -> GridDensity:
    """Binned-FFT kernel density on the solver grid.

    Particles are wrapped periodically in x and dropped outside the v box;
    the histogram is convolved with the sampled kernel (periodic in x, zero
    padded in v) and renormalized to unit mass.
    """
    d = ens.d
    x = _wrap_x(ens.x, geom.lx)
    v = ens.v
    inside = np.all(np.abs(v) < geom.lv, axis=1)
    pts = np.hstack([x[inside], v[inside]])
    edges = ([np.linspace(-geom.lx, geom.lx, geom.nx + 1)] * d
             + [np.linspace(-geom.lv, geom.lv, geom.nv + 1)] * d)
    hist, _ = np.histogramdd(pts, bins=edges)
    hist /= ens.n * geom.cell_volume

    spacings = geom.spacings()
    half = [int(np.ceil(mollifier.eps / spacings[ax])) for ax in range(2 * d)]
    axes = [np.arange(-h, h + 1) * spacings[ax] for ax, h in enumerate(half)]
    grids = np.meshgrid(*axes, indexing="ij")
    table = mollifier(np.stack(grids, axis=-1))
    table /= table.sum() * geom.cell_volume

    pad = [(h, h) for h in half]
    padded = np.pad(hist, pad, mode="constant")
    # re-wrap the x padding periodically
    for ax in range(d):
        w = half[ax]
        if w == 0:
            continue
        src_lo = [slice(None)] * padded.ndim
        src_hi = [slice(None)] * padded.ndim
        src_lo[ax] = slice(w, 2 * w)
        src_hi[ax] = slice(-2 * w, -w)
        dst_lo = [slice(None)] * padded.ndim
        dst_hi = [slice(None)] * padded.ndim
        dst_lo[ax] = slice(-w, None)
        dst_hi[ax] = slice(0, w)
        padded[tuple(dst_lo)] = padded[tuple(src_lo)]
        padded[tuple(dst_hi)] = padded[tuple(src_hi)]
    smooth = fftconvolve(padded, table, mode="same") * geom.cell_volume
    crop = tuple(slice(h, h + n) for h, n in zip(half, geom.shape))
    rho = np.clip(smooth[crop], 0.0, None)
    if renormalize:
        total = rho.sum() * geom.cell_volume
        if total > 0:
            rho = rho / total
    return GridDensity(ens.t, rho, geom)


# ---------------------------------------------------------------------------
# Mollified coefficients and stepping
# ---------------------------------------------------------------------------

def _density_at_particles(ens: ParticleEnsemble, mollifier: Mollifier,
                          geom: Optional[GridGeometry]) -> np.ndarray:
    if geom is not None:
        grid = kde_on_grid(ens, geom, mollifier, renormalize=False)
        axes = ([geom.x_coords()] * ens.d + [geom.v_coords()] * ens.d)
        interp = RegularGridInterpolator(tuple(axes), grid.rho,
                                         bounds_error=False, fill_value=0.0)
        pts = np.hstack([_wrap_x(ens.x, geom.lx), ens.v])
        return interp(pts)
    return kde_density(ens, ens.phase_points(), mollifier)


def _mass_density_at_particles(ens: ParticleEnsemble, mollifier: Mollifier) -> np.ndarray:
    """x-marginal estimate <rho>(X_i) with the d-dimensional bump."""
    marg = Mollifier(eps=mollifier.eps, m=ens.d)
    tree = cKDTree(ens.x)
    out = np.zeros(ens.n)
    hits = tree.query_ball_point(ens.x, r=marg.eps * (1.0 + 1e-12), workers=-1)
    for i, idx in enumerate(hits):
        if idx:
            out[i] = marg(ens.x[i] - ens.x[idx]).sum()
    return out / ens.n


def _direct_pair_average(kernel: Callable, pts: np.ndarray, out_dim: int,
                         budget: float) -> np.ndarray:
    n = pts.shape[0]
    cost = float(n) * float(n)
    if cost > budget:
        raise BudgetExceededError(cost, budget, "direct pairwise coefficient sum")
    out = np.zeros((n, out_dim))
    chunk = max(1, int(2e6 // max(n, 1)))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        diff = pts[lo:hi, None, :] - pts[None, :, :]
        out[lo:hi] = np.asarray(kernel(diff), dtype=float).mean(axis=1)
    return out


def mollified_coefficients(ens: ParticleEnsemble, spec: CoefficientSpec,
                           mollifier: Mollifier,
                           geom: Optional[GridGeometry] = None,
                           budget: float = DIRECT_PAIR_BUDGET):
    """Per-particle drift and diffusion averaged over the empirical measure.

    Returns (b, a) with shapes (N, d) and (N, d, d); a is projected into the
    declared ellipticity band. Convolutional forms run through a binned FFT
    when a grid is supplied and fall back to the direct O(N^2) sum under the
    pair budget; general forms are always direct sums.
    """
    d = ens.d
    t = ens.t
    pts = ens.phase_points()

    r_at = None
    if spec.b_r_factor is not None or (
            spec.b_fn is not None and getattr(spec.b_fn, "uses_density", True)) or (
            spec.b_general is not None):
        r_at = _density_at_particles(ens, mollifier, geom)

    # Drift
    if spec.b_general is not None:
        n = ens.n
        cost = float(n) * float(n)
        if cost > budget:
            raise BudgetExceededError(cost, budget, "general-form drift sum")
        b = np.zeros((n, d))
        chunk = max(1, int(2e6 // max(n, 1)))
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            vals = spec.b_general(t, pts[lo:hi, None, :], r_at[lo:hi, None],
                                  pts[None, :, :])
            b[lo:hi] = np.asarray(vals, dtype=float).mean(axis=1)
    elif spec.b_kernel is not None:
        if geom is not None and ens.n * ens.n > budget:
            grid = kde_on_grid(ens, geom, Mollifier(eps=max(mollifier.eps,
                                                            2 * geom.dv), m=2 * d),
                               renormalize=True)
            from .fpk import effective_coefficients as _eff
            eff = _eff(GridDensity(t, grid.rho, geom), spec)
            axes = [geom.x_coords()] * d + [geom.v_coords()] * d
            b = np.empty((ens.n, d))
            for c in range(d):
                interp = RegularGridInterpolator(tuple(axes), eff.bbar[..., c],
                                                 bounds_error=False, fill_value=0.0)
                b[:, c] = interp(np.hstack([_wrap_x(ens.x, geom.lx), ens.v]))
        else:
            b = _direct_pair_average(spec.b_kernel, pts, d, budget)
        if spec.b_r_factor is not None:
            b = b * np.asarray(spec.b_r_factor(r_at), dtype=float)[:, None]
    elif spec.b_fn is not None:
        r_arg = r_at if r_at is not None else np.zeros(ens.n)
        b = np.asarray(spec.b_fn(t, pts, r_arg), dtype=float)
    else:
        b = np.zeros((ens.n, d))

    # Diffusion
    if spec.a_general is not None:
        mass_r = _mass_density_at_particles(ens, mollifier)
        n = ens.n
        if float(n) * float(n) > budget:
            raise BudgetExceededError(float(n) * n, budget, "general-form diffusion sum")
        a = np.zeros((n, d, d))
        chunk = max(1, int(2e6 // max(n, 1)))
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            vals = spec.a_general(t, ens.x[lo:hi, None, :], mass_r[lo:hi, None],
                                  pts[None, :, :])
            a[lo:hi] = np.asarray(vals, dtype=float).mean(axis=1)
    elif spec.a_kernel is not None:
        a = _direct_pair_average(lambda dz: spec.a_kernel(dz[..., :d]),
                                 pts, d * d, budget).reshape(ens.n, d, d)
    elif spec.a_fn is not None:
        if getattr(spec.a_fn, "uses_density", True):
            mass_r = _mass_density_at_particles(ens, mollifier)
        else:
            mass_r = np.zeros(ens.n)
        a = np.asarray(spec.a_fn(t, ens.x, mass_r), dtype=float)
    elif spec.a_const is not None:
        a = np.broadcast_to(spec.a_const, (ens.n, d, d)).copy()
    else:
        raise ContractViolationError("coefficient spec declares no diffusion")
    if spec.kappa1 > 0:
        a = ellipticity_project(a, spec.kappa0, spec.kappa1)
    return b, a


def em_step(ens: ParticleEnsemble, spec: CoefficientSpec, dt: float,
            mollifier: Optional[Mollifier] = None,
            geom: Optional[GridGeometry] = None) -> ParticleEnsemble:
    """Euler-Maruyama update from a synchronous snapshot of the ensemble.

    X <- X + V dt; V <- V + b dt + sqrt(2 a) xi sqrt(dt) with xi drawn from
    the per-particle counter streams at the current step index.
    """
    if dt <= 0:
        raise ContractViolationError("time step must be positive")
    if mollifier is None:
        mollifier = Mollifier.from_level(ens.level, 2 * ens.d)
    b, a = mollified_coefficients(ens, spec, mollifier, geom=geom)
    xi = counter_normals(ens.seed, ens.streams, ens.step, ens.d)
    if spec.form == "constant" and spec.a_const is not None:
        sigma = spd_sqrt(2.0 * spec.a_const, 2.0 * spec.kappa0)
        kick = xi @ sigma.T
    else:
        sigma = spd_sqrt(2.0 * a, 2.0 * spec.kappa0)
        kick = np.einsum("nij,nj->ni", sigma, xi)
    x_new = ens.x + ens.v * dt
    v_new = ens.v + b * dt + kick * np.sqrt(dt)
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(v_new))):
        bad = int(np.argwhere(~np.isfinite(v_new))[0][0]) if not np.all(
            np.isfinite(v_new)) else int(np.argwhere(~np.isfinite(x_new))[0][0])
        raise ContractViolationError(f"non-finite update at particle {bad}; run aborted")
    return ParticleEnsemble(x_new, v_new, ens.t + dt, ens.seed, ens.streams,
                            ens.step + 1, ens.level)


@dataclass
class SimResult:
    times: np.ndarray
    snapshots: list                      # ParticleEnsemble at snapshot times
    kde: Optional[list] = None           # GridDensity per snapshot (if geom)
    path_times: Optional[np.ndarray] = None
    path: Optional[np.ndarray] = None    # (M+1, N, 2d) when stored


def simulate(ens0: ParticleEnsemble, spec: CoefficientSpec, horizon: float,
             dt: float, snapshot_times=(), mollifier: Optional[Mollifier] = None,
             geom: Optional[GridGeometry] = None, store_path: bool = False,
             kde_grid: Optional[GridGeometry] = None) -> SimResult:
    """Run the particle scheme; deterministic for a fixed seed and schedule."""
    n_steps = int(round(horizon / dt))
    if n_steps <= 0 or abs(n_steps * dt - horizon) > 1e-9 * max(horizon, 1.0):
        raise ContractViolationError("horizon must be a positive integer number of steps")
    if mollifier is None:
        mollifier = Mollifier.from_level(ens0.level, 2 * ens0.d)
    want_idx = {min(n_steps, max(0, int(round(w / dt)))) for w in snapshot_times}
    want_idx |= {0, n_steps}
    current = ens0.copy()
    snapshots = [current.copy()]
    path = [current.phase_points().copy()] if store_path else None
    for k in range(n_steps):
        current = em_step(current, spec, dt, mollifier=mollifier, geom=geom)
        if store_path:
            path.append(current.phase_points().copy())
        if (k + 1) in want_idx:
            snapshots.append(current.copy())
    times = np.array([s.t for s in snapshots])
    kde = None
    target_geom = kde_grid or geom
    if target_geom is not None:
        kde = [kde_on_grid(s, target_geom, mollifier) for s in snapshots]
    return SimResult(
        times=times,
        snapshots=snapshots,
        kde=kde,
        path_times=np.arange(n_steps + 1) * dt if store_path else None,
        path=np.asarray(path) if store_path else None,
    )


# ---------------------------------------------------------------------------
# Transport distance
# ---------------------------------------------------------------------------

@dataclass
class W2Result:
    value: float
    reg: Optional[float]
    n_used: int
    exact: bool


def _subsample(arr: np.ndarray, k: int, seed: int) -> np.ndarray:
    if arr.shape[0] <= k:
        return arr
    rng = np.random.default_rng(np.random.Philox(key=seed))
    idx = rng.choice(arr.shape[0], size=k, replace=False)
    return arr[np.sort(idx)]


def _sinkhorn_cost(pa: np.ndarray, pb: np.ndarray, reg: float,
                   n_iter: int) -> float:
    k = pa.shape[0]
    cost = np.sum((pa[:, None, :] - pb[None, :, :]) ** 2, axis=-1)
    log_mu = -np.log(k) * np.ones(k)
    f = np.zeros(k)
    g = np.zeros(k)
    mat = -cost / reg
    for _ in range(n_iter):
        f = -reg * _logsumexp(mat + (g / reg)[None, :] + log_mu[None, :], axis=1)
        g = -reg * _logsumexp(mat + (f / reg)[:, None] + log_mu[:, None], axis=0)
    plan = np.exp(mat + (f / reg)[:, None] + (g / reg)[None, :]
                  + log_mu[:, None] + log_mu[None, :])
    return float(np.sum(plan * cost))


def wasserstein2(a: np.ndarray, b: np.ndarray, reg: Optional[float] = None,
                 max_points: int = 1200, seed: int = 0,
                 n_iter: int = 200, pair_subsample: bool = False) -> W2Result:
    """Quadratic transport distance between two point clouds.

    One-dimensional data uses the exact sorted quantile coupling; higher
    dimensions use the debiased entropic approximation (log-domain Sinkhorn
    divergence) on equal subsamples, with the regularization reported.
    ``pair_subsample`` draws the same row subset from both clouds, which
    keeps coupled ensembles coupled.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise ContractViolationError("point clouds must share a dimension")
    m = a.shape[1]
    if m == 1:
        k = min(a.shape[0], b.shape[0])
        sa = np.sort(_subsample(a[:, 0], k, seed))
        sb = np.sort(_subsample(b[:, 0], k, seed + 1))
        return W2Result(float(np.sqrt(np.mean((sa - sb) ** 2))), None, k, True)
    k = min(a.shape[0], b.shape[0], max_points)
    if pair_subsample and a.shape[0] == b.shape[0]:
        idx = np.sort(np.random.default_rng(np.random.Philox(key=seed)).choice(
            a.shape[0], size=k, replace=False)) if a.shape[0] > k else np.arange(k)
        pa, pb = a[idx], b[idx]
    else:
        pa = _subsample(a, k, seed)
        pb = _subsample(b, k, seed + 1)
    if reg is None:
        cross = np.sum((pa[:, None, :] - pb[None, :, :]) ** 2, axis=-1)
        positive = cross[cross > 0]
        reg = 0.05 * float(np.median(positive)) if positive.size else 1e-3
    value = (_sinkhorn_cost(pa, pb, reg, n_iter)
             - 0.5 * _sinkhorn_cost(pa, pa, reg, n_iter)
             - 0.5 * _sinkhorn_cost(pb, pb, reg, n_iter))
    return W2Result(float(np.sqrt(max(value, 0.0))), float(reg), k, False)


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


# ---------------------------------------------------------------------------
# Path diagnostics
# ---------------------------------------------------------------------------

@dataclass
class KrylovReport:
    deltas: np.ndarray
    lhs: np.ndarray
    ratios: np.ndarray
    theta: float
    norm: float


def krylov_check(path_times: np.ndarray, path: np.ndarray, f: Callable,
                 geom: GridGeometry, q0: float, p0, alpha0: float,
                 deltas, horizon: float, nt_norm: int = 33) -> KrylovReport:
    """Expected short-time path integrals of f against its space-time norm.

    Validates the admissibility conditions first, then estimates
    E int_0^delta f(r, Z_r) dr by Monte Carlo over the stored paths and fits
    the power theta in LHS ~ delta^theta.
    """
    d = geom.d
    av = as_anisotropy(np.concatenate([[3.0] * d, [1.0] * d]), 2 * d)
    p0 = as_exponents(p0, 2 * d)
    if not (0.0 <= alpha0 < 1.0):
        raise PreconditionError("admissibility requires alpha0 in [0, 1)")
    if not (1.0 - alpha0 < 2.0 / q0):
        raise PreconditionError("admissibility fails: 1 - alpha0 < 2/q0")
    if not (2.0 / q0 + float(av @ reciprocal(p0)) < 2.0 - 2.0 * alpha0):
        raise PreconditionError(
            "admissibility fails: 2/q0 + a.(1/p0) < 2 - 2*alpha0")

    path_times = np.asarray(path_times, dtype=float)
    path = np.asarray(path, dtype=float)
    if path.ndim != 3 or path.shape[0] != path_times.size:
        raise ContractViolationError("path must be (M+1, N, 2d) aligned with times")
    dt = float(path_times[1] - path_times[0])
    deltas = np.asarray(sorted(deltas, reverse=True), dtype=float)
    lhs = np.empty(deltas.size)
    for i, delta in enumerate(deltas):
        keep = path_times < delta - 1e-12
        vals = [np.mean(f(path_times[k], path[k])) for k in np.nonzero(keep)[0]]
        lhs[i] = float(np.sum(vals) * dt)

    # Space-time norm of f over [0, horizon] x box
    tgrid = np.linspace(0.0, horizon, nt_norm)
    z = geom.z_mesh()
    slices = np.stack([np.asarray(f(t, z), dtype=float) for t in tgrid])
    if alpha0 == 0.0:
        exps = np.concatenate([[q0], p0])
        spac = (tgrid[1] - tgrid[0],) + geom.spacings()
        norm = mixed_lp_norm(slices, exps, spac)
    else:
        from .besov import DyadicPartition, besov_norm
        part = DyadicPartition(geom.shape, geom.spacings(), av)
        per_t = np.array([
            besov_norm(sl, -alpha0, p0, part).norm for sl in slices])
        norm = float((np.sum(per_t**q0) * (tgrid[1] - tgrid[0])) ** (1.0 / q0))
    if norm == 0.0:
        warnings.warn("zero test-field norm in the path diagnostic",
                      RuntimeWarning, stacklevel=2)
        return KrylovReport(deltas, lhs, np.full_like(lhs, np.nan), float("nan"), 0.0)
    ratios = lhs / norm
    pos = lhs > 0
    theta = float(np.polyfit(np.log(deltas[pos]), np.log(lhs[pos]), 1)[0]) \
        if pos.sum() >= 2 else float("nan")
    return KrylovReport(deltas, lhs, ratios, theta, norm)


# ---------------------------------------------------------------------------
# Mollification-level stability
# ---------------------------------------------------------------------------

@dataclass
class StabilityReport:
    levels: list
    pairs: list
    l1: dict      # seed -> list of L1 distances per pair
    w2: dict      # seed -> list of W2 distances per pair
    reg: Optional[float] = None


def stability_sweep(spec: CoefficientSpec, levels, seeds, n_particles: int,
                    horizon: float, dt: float, geom: GridGeometry,
                    law: Optional[dict] = None, bandwidth_scale: float = 2.0,
                    w2_points: int = 600) -> StabilityReport:
    """Distances between runs at consecutive mollification levels.

    All levels share the seed (same base draws and noise streams), so the
    reported distances isolate the effect of the truncation level and of the
    dynamical bandwidth eps = bandwidth_scale / level. Final densities are
    compared with one common estimator (the coarsest level's bandwidth);
    using per-level estimators would swamp the trend in estimator noise.
    """
    levels = sorted(int(n) for n in levels)
    law = law or {"type": "gaussian", "mean": 0.0, "std": 1.0}
    compare_moll = Mollifier.from_level(levels[0], 2 * geom.d,
                                        scale=bandwidth_scale)
    l1 = {}
    w2 = {}
    reg_used = None
    for seed in seeds:
        finals = {}
        kdes = {}
        for level in levels:
            ens0 = initial_ensemble(n_particles, geom.d, law, seed, level)
            moll = Mollifier.from_level(level, 2 * geom.d, scale=bandwidth_scale)
            res = simulate(ens0, spec, horizon, dt, mollifier=moll, geom=geom)
            finals[level] = res.snapshots[-1]
            kdes[level] = kde_on_grid(res.snapshots[-1], geom, compare_moll)
        l1_list = []
        w2_list = []
        for lo, hi in zip(levels[:-1], levels[1:]):
            diff = np.abs(kdes[lo].rho - kdes[hi].rho).sum() * geom.cell_volume
            l1_list.append(float(diff))
            res2 = wasserstein2(finals[lo].phase_points(),
                                finals[hi].phase_points(),
                                max_points=w2_points, seed=seed,
                                pair_subsample=True)
            w2_list.append(res2.value)
            reg_used = res2.reg
        l1[seed] = l1_list
        w2[seed] = w2_list
    return StabilityReport(levels=levels,
                           pairs=[(lo, hi) for lo, hi in zip(levels[:-1], levels[1:])],
                           l1=l1, w2=w2, reg=reg_used)
