"""Mixed multi-index norms and shift-supremum localized norms.

The mixed norm iterates one-axis L^p reductions from the innermost (last)
axis outward; infinite exponents reduce by the grid maximum. Localized norms
take a supremum of cylinder-restricted norms over a finite grid of centers.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ContractViolationError
from .fields import KineticCylinder, SampledField, as_exponents

__all__ = [
    "mixed_lp_norm",
    "localized_norm",
    "equivalence_ratio_across_radii",
    "cylinder_centers",
    "cylinder_indicator_norm",
]


def _reduce_axis(values: np.ndarray, p: float, weight: float) -> np.ndarray:
    if np.isinf(p):
        return values.max(axis=-1)
    return (np.sum(values**p, axis=-1) * weight) ** (1.0 / p)


def mixed_lp_norm(field, p, spacings=None) -> float:
    """Iterated L^p norm with one exponent per axis, innermost axis last.

    ``field`` may be a SampledField or a plain array (then ``spacings`` is
    required). NaN values are rejected.
    """
    if isinstance(field, SampledField):
        values = field.values
        spacings = field.spacings
    else:
        values = np.asarray(field, dtype=float)
        if spacings is None:
            raise ContractViolationError("plain arrays need explicit spacings")
    if np.isnan(values).any():
        raise ContractViolationError("field contains NaN values")
    ps = as_exponents(p, values.ndim)
    g = np.abs(values)
    for axis in range(values.ndim - 1, -1, -1):
        g = _reduce_axis(g, ps[axis], spacings[axis])
    return float(g)


def _half_widths(r: float, d: int) -> np.ndarray:
    return np.array([r**2] + [r**3] * d + [r] * d)


def cylinder_centers(field: SampledField, r: float, stride_factor: float = 0.5):
    """Grid of candidate cylinder centers covering the field's domain.

    Per-axis stride is ``stride_factor`` times the cylinder half-extent on
    that axis (so the covering error stays a bounded multiplicative factor),
    floored at one grid cell.
    """
    d = (field.ndim - 1) // 2
    if field.ndim != 2 * d + 1:
        raise ContractViolationError("localized norms expect a (t, x.., v..) field")
    half = _half_widths(r, d)
    axes = []
    for ax in range(field.ndim):
        # half-cell offset keeps cylinder walls off the sample lattice
        lo = field.origins[ax] + 0.5 * field.spacings[ax]
        hi = field.origins[ax] + field.spacings[ax] * (field.shape[ax] - 1)
        step = max(stride_factor * half[ax], field.spacings[ax])
        n = max(int(np.floor((hi - lo) / step)) + 1, 1)
        axes.append(lo + step * np.arange(n))
    return axes


def _worker_count() -> int:
    import os

    try:
        return max(1, int(os.environ.get("KMKV_THREADS", "1")))
    except ValueError:
        return 1


def localized_norm(field: SampledField, q, p, r: float, centers=None,
                   stride_factor: float = 0.5, warn_empty: bool = True) -> float:
    """sup over shift centers of the (q, p) mixed norm restricted to Q_r.

    The field carries axes (t, x_1..x_d, v_1..v_d); ``q`` integrates time and
    ``p`` the 2d phase axes. Cylinders are axis-aligned boxes, so each
    restriction is a subarray.
    """
    if r <= 0:
        raise ContractViolationError("cylinder radius must be positive")
    d = (field.ndim - 1) // 2
    if field.ndim != 2 * d + 1:
        raise ContractViolationError("localized norms expect a (t, x.., v..) field")
    exps = np.concatenate([[float(q)], as_exponents(p, 2 * d)])
    if centers is None:
        axes = cylinder_centers(field, r, stride_factor)
        mesh = np.meshgrid(*axes, indexing="ij")
        centers = np.stack([m.ravel() for m in mesh], axis=-1)
    else:
        centers = np.atleast_2d(np.asarray(centers, dtype=float))

    def one(center):
        cyl = KineticCylinder(center[0], center[1:1 + d], center[1 + d:], r)
        sl = cyl.slices(field)
        if any(s.stop <= s.start for s in sl):
            return None
        return mixed_lp_norm(field.values[sl], exps, field.spacings)

    nthreads = _worker_count()
    if nthreads > 1 and len(centers) > 64:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            results = list(pool.map(one, centers))
    else:
        results = [one(c) for c in centers]
    values = [v for v in results if v is not None]
    if not values:
        if warn_empty:
            warnings.warn("no cylinder overlaps the sampled domain; norm is 0",
                          RuntimeWarning, stacklevel=2)
        return 0.0
    return float(max(values))


def equivalence_ratio_across_radii(field: SampledField, q, p, r: float,
                                   r_prime: float, centers=None) -> float:
    """localized_norm(r) / localized_norm(r'); NaN and a warning if degenerate."""
    num = localized_norm(field, q, p, r, centers=centers)
    den = localized_norm(field, q, p, r_prime, centers=centers)
    if den == 0.0:
        warnings.warn("degenerate radius-equivalence ratio (zero denominator)",
                      RuntimeWarning, stacklevel=2)
        return float("nan")
    return num / den


def cylinder_indicator_norm(q, p, r: float, d: int) -> float:
    """Exact (q, p) mixed norm of the indicator of a kinetic cylinder.

    Side lengths are 2r^2 in t, 2r^3 per x-axis, and 2r per v-axis; an
    infinite exponent contributes factor 1.
    """
    exps = np.concatenate([[float(q)], as_exponents(p, 2 * d)])
    sides = 2.0 * _half_widths(r, d)
    out = 1.0
    for side, e in zip(sides, exps):
        if np.isfinite(e):
            out *= side ** (1.0 / e)
    return float(out)
