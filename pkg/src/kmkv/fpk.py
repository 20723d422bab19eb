"""Conservative grid solver for linear and nonlinear kinetic equations.

Density evolution follows the Ito convention: with particle dynamics
dX = V dt, dV = b dt + sqrt(2a) dW the density solves

    d rho/dt = div_v(abar grad_v rho) - v . grad_x rho - div_v(bbar rho),

where abar is v-independent, which is what makes the divergence form exact.
Stepping is a Strang split: half-step exact spectral transport in x, a full
conservative flux step in v (central diffusive flux, upwind advective flux),
then another transport half-step. x is periodic, v walls carry zero flux.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.signal import fftconvolve

from .coefficients import CoefficientSpec
from .errors import BudgetExceededError, CFLError, ContractViolationError
from .fields import SampledField
from .matrices import ellipticity_project

__all__ = [
    "GridGeometry",
    "GridDensity",
    "EffectiveFields",
    "FPKRun",
    "effective_coefficients",
    "fpk_step",
    "fpk_solve",
    "advective_kinetic_solve",
    "backward_kolmogorov_solve",
]

GENERAL_FORM_BUDGET = 5e7


@dataclass(frozen=True)
class GridGeometry:
    """Uniform (x, v) tensor grid on [-lx, lx]^d x [-lv, lv]^d.

    Cell centers sit at -L + (i + 1/2) delta, so the periodic x wrap and the
    zero-flux v walls both align with cell faces.
    """

    d: int
    nx: int
    nv: int
    lx: float
    lv: float

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ContractViolationError("grid solver supports d in {1, 2}")
        if self.nx < 4 or self.nv < 4 or self.lx <= 0 or self.lv <= 0:
            raise ContractViolationError("degenerate grid geometry")

    @property
    def dx(self) -> float:
        return 2.0 * self.lx / self.nx

    @property
    def dv(self) -> float:
        return 2.0 * self.lv / self.nv

    @property
    def shape(self) -> tuple:
        return (self.nx,) * self.d + (self.nv,) * self.d

    @property
    def x_shape(self) -> tuple:
        return (self.nx,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d * self.dv**self.d

    def x_coords(self) -> np.ndarray:
        return -self.lx + (np.arange(self.nx) + 0.5) * self.dx

    def v_coords(self) -> np.ndarray:
        return -self.lv + (np.arange(self.nv) + 0.5) * self.dv

    def x_mesh(self) -> np.ndarray:
        return _x_mesh(self)

    def z_mesh(self) -> np.ndarray:
        return _z_mesh(self)

    def spacings(self) -> tuple:
        return (self.dx,) * self.d + (self.dv,) * self.d

    def origins(self) -> tuple:
        return ((-self.lx + 0.5 * self.dx,) * self.d
                + (-self.lv + 0.5 * self.dv,) * self.d)

    def to_field(self, values: np.ndarray) -> SampledField:
        return SampledField(values, self.spacings(), self.origins())

    def gaussian(self, mean, std) -> np.ndarray:
        """Unit-mass separable Gaussian on the grid (renormalized exactly)."""
        mean = np.broadcast_to(np.asarray(mean, dtype=float), (2 * self.d,))
        std = np.broadcast_to(np.asarray(std, dtype=float), (2 * self.d,))
        z = self.z_mesh()
        expo = np.zeros(self.shape)
        for i in range(2 * self.d):
            expo = expo + ((z[..., i] - mean[i]) / std[i]) ** 2
        rho = np.exp(-0.5 * expo)
        return rho / (rho.sum() * self.cell_volume)


@lru_cache(maxsize=16)
def _x_mesh(geom: GridGeometry) -> np.ndarray:
    grids = np.meshgrid(*([geom.x_coords()] * geom.d), indexing="ij")
    return np.stack(grids, axis=-1)


@lru_cache(maxsize=16)
def _z_mesh(geom: GridGeometry) -> np.ndarray:
    axes = [geom.x_coords()] * geom.d + [geom.v_coords()] * geom.d
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack(grids, axis=-1)


@dataclass
class GridDensity:
    """Nonnegative unit-mass density snapshot with its step diagnostics."""

    t: float
    rho: np.ndarray
    geom: GridGeometry
    clip_mass: float = 0.0

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        if self.rho.shape != self.geom.shape:
            raise ContractViolationError("density shape does not match the grid")

    def mass(self) -> float:
        return float(self.rho.sum() * self.geom.cell_volume)

    def validate(self, mass_tol: float = 1e-9, neg_tol: float = 1e-12) -> None:
        if np.min(self.rho) < -neg_tol:
            raise ContractViolationError(
                f"density has negative values below tolerance: {np.min(self.rho):.3e}")
        if abs(self.mass() - 1.0) > mass_tol:
            raise ContractViolationError(f"density mass {self.mass():.12f} != 1")

    def mass_density(self) -> np.ndarray:
        """x-marginal <rho>(x) = integral over v."""
        v_axes = tuple(range(self.geom.d, 2 * self.geom.d))
        return self.rho.sum(axis=v_axes) * self.geom.dv**self.geom.d

    def moments(self) -> dict:
        z = self.geom.z_mesh()
        w = self.rho * self.geom.cell_volume
        total = w.sum()
        n = 2 * self.geom.d
        mean = np.array([np.sum(w * z[..., i]) for i in range(n)]) / total
        cov = np.zeros((n, n))
        for i in range(n):
            for j in range(i, n):
                cov[i, j] = np.sum(w * (z[..., i] - mean[i]) * (z[..., j] - mean[j])) / total
                cov[j, i] = cov[i, j]
        return {"mean": mean, "cov": cov}

    def wall_mass(self) -> float:
        """Mass sitting in the outermost v-cells (boundary-pressure log)."""
        d = self.geom.d
        total = 0.0
        for ax in range(d, 2 * d):
            sl_lo = [slice(None)] * self.rho.ndim
            sl_hi = [slice(None)] * self.rho.ndim
            sl_lo[ax] = slice(0, 1)
            sl_hi[ax] = slice(-1, None)
            total += float(self.rho[tuple(sl_lo)].sum() + self.rho[tuple(sl_hi)].sum())
        return total * self.geom.cell_volume

    def to_field(self) -> SampledField:
        return self.geom.to_field(self.rho)

    def copy(self) -> "GridDensity":
        return GridDensity(self.t, self.rho.copy(), self.geom, self.clip_mass)


@dataclass
class EffectiveFields:
    """Density-averaged coefficients: abar over x only, bbar over (x, v)."""

    abar: np.ndarray   # x_shape + (d, d)
    bbar: np.ndarray   # shape + (d,)

    def max_drift(self) -> float:
        return float(np.max(np.abs(self.bbar))) if self.bbar.size else 0.0

    def max_diffusion(self) -> float:
        d = self.abar.shape[-1]
        return float(np.linalg.eigvalsh(self.abar.reshape(-1, d, d)).max())


def _kernel_table(kernel: Callable, geom: GridGeometry, over: str) -> np.ndarray:
    """Sample an interaction kernel at all pairwise grid offsets.

    Tables have 2n-1 entries per axis so no pair is truncated; the center
    sits at index n-1, matching scipy's 'same' alignment for odd kernels.
    """
    def offsets(n, delta):
        return (np.arange(2 * n - 1) - (n - 1)) * delta

    if over == "z":
        axes = ([offsets(geom.nx, geom.dx)] * geom.d
                + [offsets(geom.nv, geom.dv)] * geom.d)
    else:
        axes = [offsets(geom.nx, geom.dx)] * geom.d
    grids = np.meshgrid(*axes, indexing="ij")
    return np.asarray(kernel(np.stack(grids, axis=-1)), dtype=float)


def _convolve_same(density: np.ndarray, table: np.ndarray, cell: float) -> np.ndarray:
    """Linear convolution against each trailing component of the table."""
    grid_shape = table.shape[:density.ndim]
    comp_shape = table.shape[density.ndim:]
    flat = table.reshape(grid_shape + (-1,))
    out = np.empty(density.shape + (flat.shape[-1],))
    for c in range(flat.shape[-1]):
        out[..., c] = fftconvolve(density, flat[..., c], mode="same") * cell
    return out.reshape(density.shape + comp_shape)


def effective_coefficients(density: GridDensity, spec: CoefficientSpec,
                           budget: float = GENERAL_FORM_BUDGET) -> EffectiveFields:
    """Average the model coefficients against the current density.

    abar(t,x) averages a(t,x,<rho>(x),z') over rho(z') dz' and is projected
    into the declared ellipticity band; bbar(t,z) averages the drift the
    same way. Convolutional forms go through FFT; general forms are direct
    sums guarded by a cost budget.
    """
    geom = density.geom
    d = geom.d
    t = density.t
    rho = density.rho
    mass = density.mass()
    mass_r = density.mass_density()

    if spec.a_general is not None:
        abar = _average_general(spec.a_general, t, geom.x_mesh(), mass_r,
                                density, (d, d), budget)
    elif spec.a_kernel is not None:
        abar = _convolve_same(mass_r, _kernel_table(spec.a_kernel, geom, "x"),
                              geom.dx**d)
    elif spec.a_fn is not None:
        abar = np.asarray(spec.a_fn(t, geom.x_mesh(), mass_r), dtype=float) * mass
    elif spec.a_const is not None:
        abar = np.broadcast_to(spec.a_const, geom.x_shape + (d, d)).copy()
    else:
        raise ContractViolationError("coefficient spec declares no diffusion")
    if spec.kappa1 > 0:
        abar = ellipticity_project(abar, spec.kappa0, spec.kappa1)

    if spec.b_general is not None:
        bbar = _average_general(spec.b_general, t, geom.z_mesh(), rho, density,
                                (d,), budget)
    elif spec.b_kernel is not None:
        bbar = _convolve_same(rho, _kernel_table(spec.b_kernel, geom, "z"),
                              geom.cell_volume)
        if spec.b_r_factor is not None:
            bbar = bbar * np.asarray(spec.b_r_factor(rho), dtype=float)[..., None]
    elif spec.b_fn is not None:
        bbar = np.asarray(spec.b_fn(t, geom.z_mesh(), rho), dtype=float) * mass
    else:
        bbar = np.zeros(geom.shape + (d,))
    return EffectiveFields(abar=abar, bbar=bbar)


def _average_general(fn: Callable, t: float, eval_mesh: np.ndarray,
                     local_density: np.ndarray, density: GridDensity,
                     out_comp: tuple, budget: float) -> np.ndarray:
    geom = density.geom
    zp = geom.z_mesh().reshape(-1, 2 * geom.d)
    weights = density.rho.reshape(-1) * geom.cell_volume
    pts = eval_mesh.reshape(-1, eval_mesh.shape[-1])
    cost = float(pts.shape[0]) * float(zp.shape[0])
    if cost > budget:
        raise BudgetExceededError(cost, budget, "general-form coefficient average")
    rvals = local_density.reshape(-1)
    out = np.zeros((pts.shape[0],) + out_comp)
    chunk = max(1, int(2e6 // max(zp.shape[0], 1)))
    for lo in range(0, pts.shape[0], chunk):
        hi = min(lo + chunk, pts.shape[0])
        block = fn(t, pts[lo:hi, None, :], rvals[lo:hi, None], zp[None, :, :])
        out[lo:hi] = np.tensordot(np.asarray(block, dtype=float), weights,
                                  axes=([1], [0]))
    return out.reshape(eval_mesh.shape[:-1] + out_comp)


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def cfl_limit(geom: GridGeometry, kappa1: float, safety: float = 0.9) -> float:
    """0.9 min(dv^2 / (2 d kappa1), dx / max|v|)."""
    diff = geom.dv**2 / (2.0 * geom.d * max(kappa1, 1e-300))
    trans = geom.dx / geom.lv
    return safety * min(diff, trans)


def _transport(rho: np.ndarray, geom: GridGeometry, dt: float) -> np.ndarray:
    """Exact shift rho(x - v dt, v), spectral along the periodic x axes."""
    d = geom.d
    nd = rho.ndim
    hat = np.fft.fftn(rho, axes=tuple(range(d)))
    k = 2.0 * np.pi * np.fft.fftfreq(geom.nx, d=geom.dx)
    v = geom.v_coords()
    for i in range(d):
        shp_k = [1] * nd
        shp_k[i] = -1
        shp_v = [1] * nd
        shp_v[d + i] = -1
        hat = hat * np.exp(-1j * dt * k.reshape(shp_k) * v.reshape(shp_v))
    return np.fft.ifftn(hat, axes=tuple(range(d))).real


def _collision(rho: np.ndarray, geom: GridGeometry, eff: EffectiveFields,
               dt: float) -> np.ndarray:
    """One conservative explicit step of div_v(abar grad_v rho - bbar rho).

    Fluxes live on interior v faces; wall fluxes are zero, so the update
    telescopes and mass is conserved to roundoff.
    """
    d = geom.d
    dv = geom.dv
    out = rho.copy()
    for i in range(d):
        ax = d + i
        lo = [slice(None)] * rho.ndim
        hi = [slice(None)] * rho.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)

        aii = eff.abar[..., i, i].reshape(geom.x_shape + (1,) * d)
        flux = aii * (rho[hi] - rho[lo]) / dv

        for j in range(d):
            if j == i:
                continue
            aij = eff.abar[..., i, j].reshape(geom.x_shape + (1,) * d)
            grad_j = np.gradient(rho, dv, axis=d + j)
            flux = flux + aij * 0.5 * (grad_j[hi] + grad_j[lo])

        w = 0.5 * (eff.bbar[hi + (i,)] + eff.bbar[lo + (i,)])
        flux = flux - w * np.where(w > 0, rho[lo], rho[hi])

        div = np.zeros_like(rho)
        div[lo] += flux
        div[hi] -= flux
        out = out + dt / dv * div
    return out


def fpk_step(density: GridDensity, spec: CoefficientSpec, dt: float,
             eff: Optional[EffectiveFields] = None) -> GridDensity:
    """One Strang-split step; mass is conserved and negatives are clipped.

    Raises CFLError when dt exceeds 0.9 min(dv^2/(2 d kappa1), dx / max|v|).
    """
    geom = density.geom
    dt_max = cfl_limit(geom, spec.kappa1)
    if dt > dt_max * (1.0 + 1e-12):
        raise CFLError(dt, dt_max)
    if eff is None:
        eff = effective_coefficients(density, spec)
    mass_before = density.rho.sum()

    rho = _transport(density.rho, geom, 0.5 * dt)
    rho = _collision(rho, geom, eff, dt)
    rho = _transport(rho, geom, 0.5 * dt)

    neg = rho < 0.0
    clip = float(-rho[neg].sum() * geom.cell_volume) if neg.any() else 0.0
    if neg.any():
        rho = np.where(neg, 0.0, rho)
        rho *= mass_before / rho.sum()
    return GridDensity(density.t + dt, rho, geom, clip_mass=clip)


@dataclass
class FPKRun:
    snapshots: list
    clip_mass_total: float
    max_mass_error: float
    wall_mass_max: float
    steps: int
    dt: float
    metadata: dict = dataclass_field(default_factory=dict)


def fpk_solve(density0: GridDensity, spec: CoefficientSpec, horizon: float,
              dt: float, snapshot_times=None) -> FPKRun:
    """March to the horizon, refreshing nonlinear coefficients once per step.

    Snapshots are taken at the nodes nearest the requested times (t=0 and
    the final node always included). Deterministic for fixed inputs.
    """
    geom = density0.geom
    n_steps = int(round(horizon / dt))
    if n_steps <= 0 or abs(n_steps * dt - horizon) > 1e-9 * max(horizon, 1.0):
        raise ContractViolationError("horizon must be a positive integer number of steps")
    want_idx = {min(n_steps, max(0, int(round(w / dt))))
                for w in (snapshot_times or [])}
    want_idx |= {0, n_steps}

    current = density0.copy()
    snapshots = [current.copy()]
    clip_total = 0.0
    mass_err = abs(current.mass() - 1.0)
    wall_max = current.wall_mass()
    eff = None
    for k in range(n_steps):
        if eff is None or spec.form != "constant":
            eff = effective_coefficients(current, spec)
        current = fpk_step(current, spec, dt, eff=eff)
        clip_total += current.clip_mass
        mass_err = max(mass_err, abs(current.mass() - 1.0))
        wall_max = max(wall_max, current.wall_mass())
        if (k + 1) in want_idx:
            snapshots.append(current.copy())
    return FPKRun(
        snapshots=snapshots,
        clip_mass_total=clip_total,
        max_mass_error=mass_err,
        wall_mass_max=wall_max,
        steps=n_steps,
        dt=dt,
        metadata={
            "grid": {"d": geom.d, "nx": geom.nx, "nv": geom.nv,
                     "lx": geom.lx, "lv": geom.lv},
            "dt": dt,
            "spec": spec.describe(),
            "clip_mass": clip_total,
            "boundary_wall_mass": wall_max,
        },
    )


# ---------------------------------------------------------------------------
# Advective (non-divergence) solves and the backward equation
# ---------------------------------------------------------------------------

def _advect_diffuse(u: np.ndarray, geom: GridGeometry, abar: np.ndarray,
                    bbar: np.ndarray, dt: float,
                    source: Optional[np.ndarray]) -> np.ndarray:
    """Explicit step of du = div(a grad_v u) + b.grad_v u + g.

    Central diffusion with Neumann walls plus upwind advection; monotone
    under the CFL bound for d = 1.
    """
    d = geom.d
    dv = geom.dv
    out = u.copy()
    for i in range(d):
        ax = d + i
        aii = abar[..., i, i].reshape(geom.x_shape + (1,) * d)
        up = np.roll(u, -1, axis=ax)
        dn = np.roll(u, 1, axis=ax)
        sl_first = [slice(None)] * u.ndim
        sl_last = [slice(None)] * u.ndim
        sl_first[ax] = slice(0, 1)
        sl_last[ax] = slice(-1, None)
        up[tuple(sl_last)] = u[tuple(sl_last)]
        dn[tuple(sl_first)] = u[tuple(sl_first)]
        out = out + dt * aii * (up - 2.0 * u + dn) / dv**2

        for j in range(d):
            if j == i:
                continue
            aij = abar[..., i, j].reshape(geom.x_shape + (1,) * d)
            cross = np.gradient(np.gradient(u, dv, axis=d + j), dv, axis=ax)
            out = out + dt * aij * cross

        b_i = bbar[..., i]
        fwd = (up - u) / dv
        bwd = (u - dn) / dv
        out = out + dt * b_i * np.where(b_i > 0, fwd, bwd)
    if source is not None:
        out = out + dt * source
    return out


def advective_kinetic_solve(u0: np.ndarray, geom: GridGeometry, coeffs,
                            horizon: float, dt: float, source=None,
                            transport_sign: float = 1.0):
    """March du/dt = div(a grad_v u) + sign v.grad_x u + b.grad_v u + g.

    ``coeffs`` is a (abar, bbar) pair or a callable of time producing one;
    ``source`` a grid array, a callable of time, or None. Returns u at every
    node, time ascending.
    """
    n_steps = int(round(horizon / dt))
    if n_steps <= 0 or abs(n_steps * dt - horizon) > 1e-9 * max(horizon, 1.0):
        raise ContractViolationError("horizon must be a positive integer number of steps")
    u = np.asarray(u0, dtype=float).copy()
    out = [u.copy()]
    for k in range(n_steps):
        t = k * dt
        abar, bbar = coeffs(t) if callable(coeffs) else coeffs
        dt_max = cfl_limit(geom, EffectiveFields(abar, bbar).max_diffusion())
        if dt > dt_max * (1.0 + 1e-12):
            raise CFLError(dt, dt_max)
        g = source(t) if callable(source) else source
        u = _transport(u, geom, -transport_sign * 0.5 * dt)
        u = _advect_diffuse(u, geom, abar, bbar, dt, g)
        u = _transport(u, geom, -transport_sign * 0.5 * dt)
        out.append(u.copy())
    return out


def backward_kolmogorov_solve(terminal_source, geom: GridGeometry, coeffs,
                              horizon: float, dt: float):
    """Solve du/dt + tr(a grad_v^2 u) + v.grad_x u + b.grad_v u = f, u(T)=0.

    ``coeffs`` maps forward time to (abar, bbar); ``terminal_source`` maps
    forward time to the grid array f(t). Time reversal hands the problem to
    the advective solver; the result is returned at forward nodes 0..T
    ascending and serves as the test-function oracle for path-martingale
    checks.
    """
    def reversed_coeffs(s):
        return coeffs(horizon - s) if callable(coeffs) else coeffs

    def reversed_source(s):
        f = (terminal_source(horizon - s) if callable(terminal_source)
             else terminal_source)
        return None if f is None else -np.asarray(f, dtype=float)

    w = advective_kinetic_solve(np.zeros(geom.shape), geom, reversed_coeffs,
                                horizon, dt, source=reversed_source,
                                transport_sign=1.0)
    return list(reversed(w))
