"""Model coefficients b(t,z,r,z') and a(t,x,r,z') with declared structure.

The structural form tag drives how solvers average a coefficient against a
density or an ensemble:

* ``constant``       -- a and b ignore (r, z'); averaging integrates out.
* ``pointwise``      -- no z' dependence; only the local density value enters.
* ``convolutional``  -- b(t,z,r,z') = psi(r) K(z - z'), averaged by FFT.
* ``general``        -- full dependence; direct summation with a cost budget.

Callables are vectorized over leading axes. ``kappa0 = 0`` is allowed only as
a test override (ballistic / zero-noise paths).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Optional

import numpy as np

from .errors import ContractViolationError
from .matrices import ellipticity_bounds_check

__all__ = [
    "CoefficientSpec",
    "constant_diffusion",
    "bounded_smooth_drift",
    "density_lipschitz_drift",
    "convolutional_drift",
    "landau_variant",
    "PRESETS",
    "make_preset",
]

_FORMS = ("constant", "pointwise", "convolutional", "general")


@dataclass(frozen=True)
class CoefficientSpec:
    d: int
    kappa0: float
    kappa1: float
    form: str
    a_const: Optional[np.ndarray] = None
    a_fn: Optional[Callable] = None          # (t, x[..,d], r[..]) -> [.., d, d]
    a_kernel: Optional[Callable] = None      # (dx[..,d]) -> [.., d, d]
    a_general: Optional[Callable] = None     # (t, x, r, zp[..,2d]) -> [.., d, d]
    b_fn: Optional[Callable] = None          # (t, z[..,2d], r[..]) -> [.., d]
    b_kernel: Optional[Callable] = None      # (dz[..,2d]) -> [.., d]
    b_r_factor: Optional[Callable] = None    # scalar multiplier psi(r)
    b_general: Optional[Callable] = None     # (t, z, r, zp[..,2d]) -> [.., d]
    drift_bound: Optional[float] = None
    density_lipschitz: Optional[float] = None
    name: str = "custom"
    params: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        if self.form not in _FORMS:
            raise ContractViolationError(f"unknown structural form {self.form!r}")
        if not (0 <= self.kappa0 <= self.kappa1):
            raise ContractViolationError("need 0 <= kappa0 <= kappa1")
        if self.a_const is not None:
            a0 = np.asarray(self.a_const, dtype=float)
            if a0.shape != (self.d, self.d):
                raise ContractViolationError("a_const must be d x d")
            if not ellipticity_bounds_check(a0, self.kappa0, self.kappa1):
                raise ContractViolationError("a_const violates the declared band")
            object.__setattr__(self, "a_const", a0)

    @property
    def has_drift(self) -> bool:
        return any(f is not None for f in (self.b_fn, self.b_kernel, self.b_general))

    def drift_needs_density(self) -> bool:
        return self.b_r_factor is not None or (
            self.b_fn is not None and getattr(self.b_fn, "uses_density", True))

    def describe(self) -> dict:
        return {
            "name": self.name,
            "form": self.form,
            "d": self.d,
            "kappa0": self.kappa0,
            "kappa1": self.kappa1,
            "drift_bound": self.drift_bound,
            "density_lipschitz": self.density_lipschitz,
            "params": dict(self.params),
        }


def _mark_density_free(fn):
    fn.uses_density = False
    return fn


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def constant_diffusion(d: int = 1, a0: float = 0.5) -> CoefficientSpec:
    """Driftless constant diffusion a = a0 I; the Gaussian-oracle workhorse."""
    return CoefficientSpec(
        d=d, kappa0=a0, kappa1=a0, form="constant",
        a_const=a0 * np.eye(d), drift_bound=0.0,
        name="constant-diffusion", params={"a0": a0},
    )


def bounded_smooth_drift(d: int = 1, a0: float = 0.5, amp_v: float = 1.0,
                         amp_x: float = 0.6, lx: float = 6.0) -> CoefficientSpec:
    """Smooth bounded drift b(z) = (-amp_v tanh(v), shifted by a periodic x force).

    The x force uses sin(pi x / lx) so the drift is periodic on [-lx, lx];
    |b| <= amp_v + amp_x componentwise.
    """

    @_mark_density_free
    def b_fn(t, z, r):
        z = np.asarray(z, dtype=float)
        x = z[..., :d]
        v = z[..., d:]
        return -amp_v * np.tanh(v) + amp_x * np.sin(np.pi * x / lx)

    return CoefficientSpec(
        d=d, kappa0=a0, kappa1=a0, form="pointwise",
        a_const=a0 * np.eye(d), b_fn=b_fn, drift_bound=amp_v + amp_x,
        name="bounded-smooth-drift",
        params={"a0": a0, "amp_v": amp_v, "amp_x": amp_x, "lx": lx},
    )


def density_lipschitz_drift(d: int = 1, a_lo: float = 0.5, a_hi: float = 1.0,
                            amp: float = 1.0, couple: float = 0.5,
                            lx: float = 6.0) -> CoefficientSpec:
    """Bounded drift with Lipschitz density coupling and a(x) diffusion.

    b(t,z,r) = -amp tanh(v) (1 + couple r/(1+r)), a(x) interpolating between
    a_lo and a_hi through a periodic profile; |db/dr| <= amp * couple.
    """

    def b_fn(t, z, r):
        z = np.asarray(z, dtype=float)
        r = np.asarray(r, dtype=float)
        v = z[..., d:]
        gate = 1.0 + couple * r[..., None] / (1.0 + r[..., None])
        return -amp * np.tanh(v) * gate

    @_mark_density_free
    def a_fn(t, x, r):
        x = np.asarray(x, dtype=float)
        profile = np.sin(np.pi * x[..., 0] / lx) ** 2
        diag = a_lo + (a_hi - a_lo) * profile
        return diag[..., None, None] * np.eye(d)

    return CoefficientSpec(
        d=d, kappa0=a_lo, kappa1=a_hi, form="pointwise",
        a_fn=a_fn, b_fn=b_fn, drift_bound=amp * (1.0 + couple),
        density_lipschitz=amp * couple,
        name="density-lipschitz-drift",
        params={"a_lo": a_lo, "a_hi": a_hi, "amp": amp, "couple": couple, "lx": lx},
    )


def convolutional_drift(d: int = 1, a0: float = 0.5, strength: float = 0.5,
                        width: float = 1.0) -> CoefficientSpec:
    """Interaction drift b(z - z') = -strength (v - v') g(|z - z'|), g a bump.

    The kernel is bounded with compact-ish support, so the dominating-kernel
    bound holds with an explicit constant.
    """

    def b_kernel(dz):
        dz = np.asarray(dz, dtype=float)
        dv = dz[..., d:]
        w2 = np.sum(dz**2, axis=-1) / width**2
        gate = np.exp(-0.5 * w2)[..., None]
        return -strength * dv * gate

    bound = strength * width * np.exp(-0.5) * np.sqrt(2 * d)
    return CoefficientSpec(
        d=d, kappa0=a0, kappa1=a0, form="convolutional",
        a_const=a0 * np.eye(d), b_kernel=b_kernel, drift_bound=bound,
        name="convolutional-drift",
        params={"a0": a0, "strength": strength, "width": width},
    )


def landau_variant(d: int = 1, a0: float = 0.5, gamma: float = 0.0,
                   c_gamma: float = 1.0, mu: float = 0.5) -> CoefficientSpec:
    """Velocity interaction kernel in the spirit of the Landau variant form.

    b(z - z') = -c_gamma (v - v') / (|v - v'|^2 + mu^2)^{(gamma + d)/2 + 1}
    with mu > 0 a desk-scale regularization keeping the kernel bounded.
    """
    if mu <= 0:
        raise ContractViolationError("landau variant needs a positive regularization")

    expo = 0.5 * (gamma + d) + 1.0

    def b_kernel(dz):
        dz = np.asarray(dz, dtype=float)
        dv = dz[..., d:]
        w2 = np.sum(dv**2, axis=-1) + mu**2
        return -c_gamma * dv / w2[..., None] ** expo

    bound = c_gamma / mu ** (gamma + d + 1)
    return CoefficientSpec(
        d=d, kappa0=a0, kappa1=a0, form="convolutional",
        a_const=a0 * np.eye(d), b_kernel=b_kernel, drift_bound=bound,
        name="landau-variant",
        params={"a0": a0, "gamma": gamma, "c_gamma": c_gamma, "mu": mu},
    )


PRESETS = {
    "constant-diffusion": constant_diffusion,
    "bounded-smooth-drift": bounded_smooth_drift,
    "density-lipschitz-drift": density_lipschitz_drift,
    "convolutional-drift": convolutional_drift,
    "landau-variant": landau_variant,
}


def make_preset(name: str, **params) -> CoefficientSpec:
    if name not in PRESETS:
        raise ContractViolationError(
            f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name](**params)
