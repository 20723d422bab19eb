"""Uniform-grid sampled fields, anisotropy bookkeeping, and on-disk formats.

Axis convention, used everywhere in the package: space-time fields are stored
as (t, x_1..x_d, v_1..v_d) and phase-space snapshots as (x_1..x_d, v_1..v_d).
Grid values are treated as midpoint samples, so integrals are plain sums times
the cell volume.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, SchemaError

FIELD_MAGIC = b"KMKV"
FIELD_FORMAT_VERSION = 1

ENSEMBLE_MAGIC = b"KMKP"
ENSEMBLE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AnisotropyVector:
    """Per-axis scaling exponents; the kinetic default is (3,..,3,1,..,1)."""

    a: tuple

    def __post_init__(self):
        arr = np.asarray(self.a, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ContractViolationError("anisotropy must be a nonempty 1-d sequence")
        if np.any(arr < 1.0):
            raise ContractViolationError("anisotropy entries must be >= 1")
        object.__setattr__(self, "a", tuple(float(x) for x in arr))

    @classmethod
    def kinetic(cls, d: int) -> "AnisotropyVector":
        """x-axes scale like r^3, v-axes like r (total weight 4d)."""
        return cls((3.0,) * d + (1.0,) * d)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.a, dtype=float)

    @property
    def total(self) -> float:
        return float(sum(self.a))

    def __len__(self) -> int:
        return len(self.a)


@dataclass(frozen=True)
class MultiIndex:
    """Integrability exponents, one per axis, each in (0, inf]."""

    p: tuple

    def __post_init__(self):
        arr = np.asarray(self.p, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ContractViolationError("multi-index must be a nonempty 1-d sequence")
        if np.any(arr <= 0.0) or np.any(np.isnan(arr)):
            raise ContractViolationError("multi-index entries must lie in (0, inf]")
        object.__setattr__(self, "p", tuple(float(x) for x in arr))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.p, dtype=float)

    def reciprocal(self) -> np.ndarray:
        """1/p entrywise, with 1/inf = 0."""
        arr = self.as_array()
        out = np.zeros_like(arr)
        finite = np.isfinite(arr)
        out[finite] = 1.0 / arr[finite]
        return out

    def ge(self, other: "MultiIndex") -> bool:
        return bool(np.all(self.as_array() >= np.asarray(other.p)))

    def gt(self, other: "MultiIndex") -> bool:
        return bool(np.all(self.as_array() > np.asarray(other.p)))

    def __len__(self) -> int:
        return len(self.p)


def as_anisotropy(a, n: int) -> np.ndarray:
    """Normalize scalars / sequences / AnisotropyVector to an n-entry array."""
    if isinstance(a, AnisotropyVector):
        arr = a.as_array()
    else:
        arr = np.atleast_1d(np.asarray(a, dtype=float))
        if arr.size == 1:
            arr = np.full(n, arr[0])
    if arr.size != n:
        raise ContractViolationError(f"anisotropy has {arr.size} entries, expected {n}")
    if np.any(arr < 1.0):
        raise ContractViolationError("anisotropy entries must be >= 1")
    return arr


def as_exponents(p, n: int) -> np.ndarray:
    """Normalize scalars / sequences / MultiIndex to an n-entry exponent array."""
    if isinstance(p, MultiIndex):
        arr = p.as_array()
    else:
        arr = np.atleast_1d(np.asarray(p, dtype=float))
        if arr.size == 1:
            arr = np.full(n, arr[0])
    if arr.size != n:
        raise ContractViolationError(f"multi-index has {arr.size} entries, expected {n}")
    if np.any(arr <= 0.0) or np.any(np.isnan(arr)):
        raise ContractViolationError("exponents must lie in (0, inf]")
    return arr


def reciprocal(p) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    out = np.zeros_like(arr)
    finite = np.isfinite(arr)
    out[finite] = 1.0 / arr[finite]
    return out


@dataclass(frozen=True)
class SampledField:
    """Values on a uniform tensor grid with per-axis spacing and origin.

    ``origins[i]`` is the coordinate of the first sample along axis ``i``.
    """

    values: np.ndarray
    spacings: tuple
    origins: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        sp = tuple(float(s) for s in np.atleast_1d(self.spacings))
        og = tuple(float(o) for o in np.atleast_1d(self.origins))
        if len(sp) != vals.ndim or len(og) != vals.ndim:
            raise ContractViolationError(
                f"spacings/origins must have {vals.ndim} entries to match the array"
            )
        if any(s <= 0 for s in sp):
            raise ContractViolationError("grid spacings must be strictly positive")
        object.__setattr__(self, "spacings", sp)
        object.__setattr__(self, "origins", og)

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def coords(self, axis: int) -> np.ndarray:
        n = self.shape[axis]
        return self.origins[axis] + self.spacings[axis] * np.arange(n)

    def with_values(self, values: np.ndarray) -> "SampledField":
        return SampledField(values, self.spacings, self.origins)

    def integral(self) -> float:
        return float(self.values.sum() * self.cell_volume)


def aniso_distance(z, zp, a) -> float:
    """Anisotropic distance sum_i |z_i - z'_i|^(1/a_i)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    zp = np.atleast_1d(np.asarray(zp, dtype=float))
    if z.shape != zp.shape:
        raise ContractViolationError("points must have matching dimensions")
    av = as_anisotropy(a, z.size)
    return float(np.sum(np.abs(z - zp) ** (1.0 / av)))


@dataclass(frozen=True)
class KineticCylinder:
    """Space-time cylinder |t-t0| < r^2, |x-x0| < r^3, |v-v0| < r.

    The x and v conditions are per-component (sup-norm boxes).
    """

    t0: float
    x0: tuple
    v0: tuple
    r: float

    def __post_init__(self):
        if self.r <= 0:
            raise ContractViolationError("cylinder radius must be positive")
        object.__setattr__(self, "x0", tuple(float(c) for c in np.atleast_1d(self.x0)))
        object.__setattr__(self, "v0", tuple(float(c) for c in np.atleast_1d(self.v0)))

    @property
    def d(self) -> int:
        return len(self.x0)

    def half_widths(self) -> np.ndarray:
        """Per-axis half extents in the (t, x.., v..) order."""
        r = self.r
        return np.array([r**2] + [r**3] * self.d + [r] * self.d)

    def center(self) -> np.ndarray:
        return np.array([self.t0, *self.x0, *self.v0])

    def contains(self, t, x, v) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        v = np.atleast_1d(np.asarray(v, dtype=float))
        ok = np.abs(t - self.t0) < self.r**2
        for i in range(self.d):
            ok = ok & (np.abs(x[..., i] - self.x0[i]) < self.r**3)
            ok = ok & (np.abs(v[..., i] - self.v0[i]) < self.r)
        return ok

    def volume(self) -> float:
        return float(np.prod(2.0 * self.half_widths()))

    def slices(self, field: SampledField) -> tuple:
        """Index slices of the grid cells whose centers fall in the cylinder.

        Cylinders are axis-aligned boxes, so restriction is a subarray view.
        """
        if field.ndim != 1 + 2 * self.d:
            raise ContractViolationError(
                f"field has {field.ndim} axes, cylinder expects {1 + 2 * self.d}"
            )
        ctr = self.center()
        half = self.half_widths()
        out = []
        for ax in range(field.ndim):
            delta = field.spacings[ax]
            org = field.origins[ax]
            # strict inequality: a cell belongs iff its center lies inside
            lo = int(np.floor((ctr[ax] - half[ax] - org) / delta + 1e-12)) + 1
            hi = int(np.ceil((ctr[ax] + half[ax] - org) / delta - 1e-12)) - 1
            lo = max(lo, 0)
            hi = min(hi, field.shape[ax] - 1)
            out.append(slice(lo, hi + 1) if hi >= lo else slice(0, 0))
        return tuple(out)

    def indicator(self, field: SampledField) -> np.ndarray:
        mask = np.zeros(field.shape, dtype=bool)
        sl = self.slices(field)
        if all(s.stop > s.start for s in sl):
            mask[sl] = True
        return mask


# ---------------------------------------------------------------------------
# Serialization: flat binary fields and CSV slices
# ---------------------------------------------------------------------------

def save_field(path, field: SampledField) -> None:
    """Write the field in the flat binary format (magic ``KMKV``)."""
    vals = np.ascontiguousarray(field.values, dtype="<f8")
    nd = field.ndim
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<II", FIELD_FORMAT_VERSION, nd))
        fh.write(struct.pack(f"<{nd}Q", *vals.shape))
        fh.write(struct.pack(f"<{nd}d", *field.spacings))
        fh.write(struct.pack(f"<{nd}d", *field.origins))
        fh.write(vals.tobytes())


def load_field(path) -> SampledField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FIELD_MAGIC:
            raise SchemaError(f"not a field file (magic {magic!r})")
        version, nd = struct.unpack("<II", fh.read(8))
        if version != FIELD_FORMAT_VERSION:
            raise SchemaError(f"unsupported field format version {version}")
        shape = struct.unpack(f"<{nd}Q", fh.read(8 * nd))
        spacings = struct.unpack(f"<{nd}d", fh.read(8 * nd))
        origins = struct.unpack(f"<{nd}d", fh.read(8 * nd))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    expected = int(np.prod(shape))
    if payload.size != expected:
        raise SchemaError(f"payload has {payload.size} values, header says {expected}")
    return SampledField(payload.reshape(shape).copy(), spacings, origins)


def export_csv(path, field: SampledField) -> None:
    """Dump a 1-d or 2-d field as coordinate/value rows."""
    if field.ndim > 2:
        raise ContractViolationError("CSV export only supports 1-d and 2-d slices")
    with open(path, "w") as fh:
        if field.ndim == 1:
            fh.write("coord0,value\n")
            c0 = field.coords(0)
            for i, val in enumerate(field.values):
                fh.write(f"{c0[i]:.17g},{val:.17g}\n")
        else:
            fh.write("coord0,coord1,value\n")
            c0, c1 = field.coords(0), field.coords(1)
            for i in range(field.shape[0]):
                for j in range(field.shape[1]):
                    fh.write(f"{c0[i]:.17g},{c1[j]:.17g},{field.values[i, j]:.17g}\n")


def save_ensemble(path, x: np.ndarray, v: np.ndarray, t: float, seed: int, level: int) -> None:
    """Write particle phase-space snapshots (header + N x 2d float64)."""
    x = np.ascontiguousarray(np.atleast_2d(x), dtype="<f8")
    v = np.ascontiguousarray(np.atleast_2d(v), dtype="<f8")
    if x.shape != v.shape:
        raise ContractViolationError("position/velocity arrays must share a shape")
    n, d = x.shape
    with open(path, "wb") as fh:
        fh.write(ENSEMBLE_MAGIC)
        fh.write(struct.pack("<IQId", ENSEMBLE_FORMAT_VERSION, n, d, t))
        fh.write(struct.pack("<QI", seed & 0xFFFFFFFFFFFFFFFF, level))
        fh.write(np.hstack([x, v]).tobytes())


def load_ensemble(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != ENSEMBLE_MAGIC:
            raise SchemaError(f"not an ensemble file (magic {magic!r})")
        version, n, d, t = struct.unpack("<IQId", fh.read(24))
        if version != ENSEMBLE_FORMAT_VERSION:
            raise SchemaError(f"unsupported ensemble format version {version}")
        seed, level = struct.unpack("<QI", fh.read(12))
        payload = np.frombuffer(fh.read(), dtype="<f8").reshape(n, 2 * d)
    return payload[:, :d].copy(), payload[:, d:].copy(), t, seed, level
