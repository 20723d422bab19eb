"""Counter-based Gaussian noise streams.

Every draw is a pure function of (seed, stream id, step, slot), built from a
splitmix64 hash and Box-Muller. That makes trajectories bit-reproducible
under any scheduling and makes permutation equivariance exact: permuting
particles together with their stream ids permutes the noise.
"""

from __future__ import annotations

import numpy as np

__all__ = ["splitmix64", "counter_normals", "component_seed"]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x) -> np.ndarray:
    """Vectorized splitmix64 finalizer over uint64 input (modular wrap)."""
    with np.errstate(over="ignore"):
        z = (np.asarray(x, dtype=np.uint64) + _GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _uniforms(seed: int, streams: np.ndarray, step: int, slot: np.ndarray) -> np.ndarray:
    """Open-interval (0,1) uniforms keyed by (seed, stream, step, slot)."""
    base = splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    h = splitmix64(base ^ splitmix64(streams.astype(np.uint64)))
    h = splitmix64(h ^ splitmix64(np.uint64(step) + np.uint64(0x1000)))
    h = splitmix64(h ^ splitmix64(slot.astype(np.uint64) + np.uint64(0x2000)))
    # 53-bit mantissa, shifted into (0, 1)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) / 9007199254740992.0


def counter_normals(seed: int, streams: np.ndarray, step: int,
                    ncols: int) -> np.ndarray:
    """Standard normals of shape (len(streams), ncols) via Box-Muller."""
    streams = np.asarray(streams, dtype=np.uint64)
    n = streams.size
    out = np.empty((n, ncols))
    for c in range(ncols):
        slot1 = np.full(n, 2 * c, dtype=np.uint64)
        slot2 = np.full(n, 2 * c + 1, dtype=np.uint64)
        u1 = _uniforms(seed, streams, step, slot1)
        u2 = _uniforms(seed, streams, step, slot2)
        out[:, c] = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return out


def component_seed(master: int, tag: str) -> int:
    """Derive a per-component seed from the master seed and a label.

    The split is documented and stable: hash the label bytes into a uint64,
    mix with the master through splitmix64.
    """
    acc = np.uint64(1469598103934665603)  # FNV-1a offset
    with np.errstate(over="ignore"):
        for byte in tag.encode("utf8"):
            acc = (acc ^ np.uint64(byte)) * np.uint64(1099511628211)
    return int(splitmix64(np.uint64(master & 0xFFFFFFFFFFFFFFFF) ^ acc))
