"""FFT-based anisotropic dyadic decomposition and Besov-scale diagnostics.

The dyadic cutoff is a quintic smoothstep of the anisotropic gauge |xi|_a,
equal to 1 inside the unit anisotropic ball and 0 outside twice it, so all
partition identities hold exactly up to float roundoff. Fields live on
periodic boxes; test inputs are expected to decay at the boundary.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, PreconditionError
from .fields import SampledField, as_anisotropy, as_exponents, reciprocal
from .norms import mixed_lp_norm

__all__ = [
    "DyadicPartition",
    "BesovNormReport",
    "block",
    "besov_norm",
    "difference_norm",
    "bernstein_check",
    "bony_paraproducts",
    "interpolation_check",
    "square_root_norm_check",
    "duality_check",
]


def _smoothstep(x: np.ndarray) -> np.ndarray:
    """Quintic ramp: 0 for x<=0, 1 for x>=1, C^2 junctions."""
    t = np.clip(x, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def radial_cutoff(s: np.ndarray) -> np.ndarray:
    """Base profile: 1 on [0,1], 0 on [2,inf), smooth between."""
    return _smoothstep(2.0 - np.asarray(s, dtype=float))


class DyadicPartition:
    """Anisotropic ring functions phi_j on the frequency lattice of a box.

    ``j_max`` defaults to the last ring with any support among resolvable
    frequencies; ``j_full`` counts rings that fit entirely inside the
    frequency box (x-like axes saturate first under kinetic anisotropy).
    """

    def __init__(self, shape, spacings, a, j_max=None):
        shape = tuple(int(n) for n in np.atleast_1d(shape))
        spacings = tuple(float(s) for s in np.atleast_1d(spacings))
        if len(shape) != len(spacings):
            raise ContractViolationError("shape and spacings must align")
        self.shape = shape
        self.spacings = spacings
        self.a = as_anisotropy(a, len(shape))

        axes = [2.0 * np.pi * np.fft.fftfreq(n, d=delta)
                for n, delta in zip(shape, spacings)]
        gauge = np.zeros(shape)
        for ax, (xi, ai) in enumerate(zip(axes, self.a)):
            shp = [1] * len(shape)
            shp[ax] = -1
            gauge = gauge + np.abs(xi.reshape(shp)) ** (1.0 / ai)
        self._gauge = gauge
        self._freqs = axes

        nyquist = np.array([np.pi / delta for delta in spacings])
        with np.errstate(divide="ignore"):
            full = np.floor(np.min(np.log2(nyquist) / self.a)) - 1
        self.j_full = max(int(full), 0)
        j_any = int(np.floor(np.log2(max(gauge.max(), 2.0)))) + 1
        self.j_max = int(j_max) if j_max is not None else max(j_any, 0)

        # Cumulative cutoffs Phi_j = phi0(2^{-j a} xi); rings telescope from them.
        self._cum = [radial_cutoff(gauge / 2.0**j) for j in range(self.j_max + 2)]

    def phi(self, j: int) -> np.ndarray:
        """Ring function phi_j (j=0 is the base cutoff)."""
        if j < 0 or j > self.j_max + 1:
            raise ContractViolationError(f"block index {j} outside 0..{self.j_max + 1}")
        if j == 0:
            return self._cum[0]
        return self._cum[j] - self._cum[j - 1]

    def cumulative(self, j: int) -> np.ndarray:
        """phi0 rescaled to level j; equals sum of rings 0..j."""
        return self._cum[j]

    def block_values(self, values: np.ndarray, j: int) -> np.ndarray:
        if values.shape != self.shape:
            raise ContractViolationError("field shape does not match partition")
        hat = np.fft.fftn(values)
        return np.fft.ifftn(hat * self.phi(j)).real

    def low_pass_values(self, values: np.ndarray, k: int) -> np.ndarray:
        """S_k = sum of blocks j < k (zero for k <= 0)."""
        if k <= 0:
            return np.zeros_like(values)
        j = min(k - 1, self.j_max + 1)
        hat = np.fft.fftn(values)
        return np.fft.ifftn(hat * self._cum[j]).real

    def derivative_block_values(self, values: np.ndarray, j: int, axis: int,
                                order: int) -> np.ndarray:
        """Spectral derivative of order ``order`` along ``axis`` of block j."""
        hat = np.fft.fftn(values) * self.phi(j)
        xi = self._freqs[axis]
        shp = [1] * len(self.shape)
        shp[axis] = -1
        hat = hat * (1j * xi.reshape(shp)) ** order
        return np.fft.ifftn(hat).real


def block(field: SampledField, j: int, partition: DyadicPartition) -> SampledField:
    """Frequency-masked copy of the field (forward/inverse FFT)."""
    return field.with_values(partition.block_values(field.values, j))


@dataclass
class BesovNormReport:
    s: float
    p: tuple
    j_max: int
    per_block: list
    norm: float
    tail: float = 0.0
    j_full: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "s": self.s,
            "p": list(self.p),
            "j_max": self.j_max,
            "j_full": self.j_full,
            "per_block": self.per_block,
            "norm": self.norm,
            "tail": self.tail,
        }, sort_keys=True)


def besov_norm(field, s: float, p, partition: DyadicPartition,
               j_max=None) -> BesovNormReport:
    """sup_j 2^{sj} ||block_j f||_{L^p} with a per-block breakdown."""
    if isinstance(field, SampledField):
        values = field.values
        spacings = field.spacings
    else:
        values = np.asarray(field, dtype=float)
        spacings = partition.spacings
    ps = as_exponents(p, values.ndim)
    jm = partition.j_max if j_max is None else min(int(j_max), partition.j_max)
    hat = np.fft.fftn(values)
    per_block = []
    for j in range(jm + 1):
        blk = np.fft.ifftn(hat * partition.phi(j)).real
        per_block.append(mixed_lp_norm(blk, ps, spacings))
    weighted = [2.0 ** (s * j) * b for j, b in enumerate(per_block)]
    norm = max(weighted) if weighted else 0.0
    tail = weighted[-1] if weighted else 0.0
    return BesovNormReport(s=float(s), p=tuple(ps), j_max=jm,
                           per_block=per_block, norm=float(norm),
                           tail=float(tail), j_full=partition.j_full)


def _dyadic_shifts(shape):
    """Per-axis dyadic cell shifts up to half the box."""
    out = []
    for ax, n in enumerate(shape):
        k = 1
        while k <= n // 2:
            out.append((ax, k))
            k *= 2
    return out


def difference_norm(field: SampledField, s: float, p, a) -> float:
    """||f||_p plus the supremum of ||f(.+h)-f||_p / |h|_a^s over grid shifts.

    Shifts are periodic (np.roll), one axis at a time, dyadic up to half the
    box; s must lie in (0,1).
    """
    if not (0.0 < s < 1.0):
        raise ContractViolationError("difference characterization needs s in (0,1)")
    ps = as_exponents(p, field.ndim)
    av = as_anisotropy(a, field.ndim)
    base = mixed_lp_norm(field, ps)
    sup = 0.0
    for ax, k in _dyadic_shifts(field.shape):
        h = k * field.spacings[ax]
        shifted = np.roll(field.values, -k, axis=ax)
        diff = mixed_lp_norm(shifted - field.values, ps, field.spacings)
        gauge = h ** (1.0 / av[ax])
        sup = max(sup, diff / gauge**s)
    return float(base + sup)


@dataclass
class RatioReport:
    ratio: float
    numerator: float
    denominator: float
    scale: float = 1.0
    degenerate: bool = False


def bernstein_check(field: SampledField, j: int, k: int, axis: int, p, q,
                    partition: DyadicPartition) -> RatioReport:
    """Measured ratio ||d^k block_j f||_q / (2^{j(a_i k + a.(1/p-1/q))} ||block_j f||_p)."""
    ps = as_exponents(p, field.ndim)
    qs = as_exponents(q, field.ndim)
    if np.any(ps > qs):
        raise PreconditionError("bernstein check requires p <= q componentwise")
    av = partition.a
    blk = partition.block_values(field.values, j)
    den = mixed_lp_norm(blk, ps, field.spacings)
    scale = 2.0 ** (j * (av[axis] * k + float(av @ (reciprocal(ps) - reciprocal(qs)))))
    if den == 0.0:
        warnings.warn("zero block norm in bernstein check", RuntimeWarning, stacklevel=2)
        return RatioReport(float("nan"), 0.0, 0.0, scale, degenerate=True)
    dblk = partition.derivative_block_values(field.values, j, axis, k)
    num = mixed_lp_norm(dblk, qs, field.spacings)
    return RatioReport(num / (scale * den), num, den, scale)


def bony_paraproducts(f: SampledField, g: SampledField,
                      partition: DyadicPartition):
    """Low-high, resonant, and high-low parts whose sum reconstructs fg.

    Blocks are truncated at the partition's j_max, so the identity holds for
    inputs band-limited below that scale.
    """
    if f.shape != g.shape:
        raise ContractViolationError("paraproduct inputs must share a grid")
    jm = partition.j_max
    hat_f = np.fft.fftn(f.values)
    hat_g = np.fft.fftn(g.values)
    blocks_f = [np.fft.ifftn(hat_f * partition.phi(j)).real for j in range(jm + 1)]
    blocks_g = [np.fft.ifftn(hat_g * partition.phi(j)).real for j in range(jm + 1)]

    def para(blocks_low, blocks_high):
        out = np.zeros(f.shape)
        low = np.zeros(f.shape)
        # S_{k-1} accumulates blocks 0..k-2
        for k in range(jm + 1):
            if k >= 2:
                low = low + blocks_low[k - 2]
            out = out + low * blocks_high[k]
        return out

    f_low_g = para(blocks_f, blocks_g)
    g_low_f = para(blocks_g, blocks_f)
    resonant = np.zeros(f.shape)
    for i in range(jm + 1):
        for j in range(max(i - 1, 0), min(i + 2, jm + 1)):
            resonant = resonant + blocks_f[i] * blocks_g[j]
    return f.with_values(f_low_g), f.with_values(resonant), f.with_values(g_low_f)


def interpolation_check(field: SampledField, s: float, p, s0: float, q,
                        s1: float, r, theta: float,
                        partition: DyadicPartition) -> RatioReport:
    """Ratio of ||f||_{B^s_p} to ||f||_{B^{s0}_q}^{1-theta} ||f||_{B^{s1}_r}^theta.

    The exponent relation (componentwise 1/p <= (1-theta)/q + theta/r plus the
    matching of a-weighted smoothness offsets) is validated first.
    """
    n = field.ndim
    ps, qs, rs = as_exponents(p, n), as_exponents(q, n), as_exponents(r, n)
    if not (0.0 <= theta <= 1.0):
        raise PreconditionError("theta must lie in [0,1]")
    av = partition.a
    lhs_int = reciprocal(ps)
    rhs_int = (1.0 - theta) * reciprocal(qs) + theta * reciprocal(rs)
    if np.any(lhs_int > rhs_int + 1e-12):
        raise PreconditionError("integrability relation 1/p <= (1-theta)/q + theta/r fails")
    off = s - float(av @ reciprocal(ps))
    off_target = ((1.0 - theta) * (s0 - float(av @ reciprocal(qs)))
                  + theta * (s1 - float(av @ reciprocal(rs))))
    if abs(off - off_target) > 1e-9:
        raise PreconditionError(
            "smoothness relation s - a.(1/p) = (1-theta)(s0 - a.(1/q)) + theta(s1 - a.(1/r)) fails")
    num = besov_norm(field, s, ps, partition).norm
    d0 = besov_norm(field, s0, qs, partition).norm
    d1 = besov_norm(field, s1, rs, partition).norm
    den = d0 ** (1.0 - theta) * d1**theta
    if den == 0.0:
        warnings.warn("degenerate interpolation ratio", RuntimeWarning, stacklevel=2)
        return RatioReport(float("nan"), num, den, degenerate=True)
    return RatioReport(num / den, num, den)


def square_root_norm_check(field: SampledField, s: float, p, a) -> RatioReport:
    """Ratio ||u||^2_{B^{s/2}_{2p}} / ||u^2||_{B^s_p} via the shift characterization."""
    if np.any(field.values < -1e-12):
        raise ContractViolationError("square-root norm check needs a nonnegative field")
    ps = as_exponents(p, field.ndim)
    num = difference_norm(field, s / 2.0, 2.0 * ps, a) ** 2
    den = difference_norm(field.with_values(field.values**2), s, ps, a)
    if den == 0.0:
        warnings.warn("degenerate square-root norm ratio", RuntimeWarning, stacklevel=2)
        return RatioReport(float("nan"), num, den, degenerate=True)
    return RatioReport(num / den, num, den)


def duality_check(f: SampledField, g: SampledField, s: float, s_prime: float,
                  p, q, partition: DyadicPartition) -> RatioReport:
    """|<f,g>| against ||f||_{B^{-s}_p} ||g||_{B^{s'}_q} for s' > s > 0, 1/p+1/q=1."""
    n = f.ndim
    ps, qs = as_exponents(p, n), as_exponents(q, n)
    if not (s_prime > s > 0):
        raise PreconditionError("duality check needs s' > s > 0")
    if np.any(np.abs(reciprocal(ps) + reciprocal(qs) - 1.0) > 1e-12):
        raise PreconditionError("duality check needs 1/p + 1/q = 1")
    pairing = abs(float(np.sum(f.values * g.values)) * f.cell_volume)
    den = (besov_norm(f, -s, ps, partition).norm
           * besov_norm(g, s_prime, qs, partition).norm)
    if den == 0.0:
        warnings.warn("degenerate duality ratio", RuntimeWarning, stacklevel=2)
        return RatioReport(float("nan"), pairing, den, degenerate=True)
    return RatioReport(pairing / den, pairing, den)
