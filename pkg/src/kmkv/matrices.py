"""Symmetric positive-definite matrix utilities.

Square roots go through the symmetric eigendecomposition (dimensions here are
2 or 3, exactness beats speed); all entry points symmetrize their input
first. Functions accept stacked (..., d, d) arrays.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import ContractViolationError, EllipticityError

__all__ = [
    "symmetrize",
    "spd_sqrt",
    "sqrt_lipschitz_check",
    "ellipticity_project",
    "ellipticity_bounds_check",
    "hs_norm",
]


def symmetrize(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def hs_norm(a: np.ndarray) -> np.ndarray:
    """Hilbert-Schmidt (Frobenius) norm over the trailing matrix axes."""
    a = np.asarray(a, dtype=float)
    return np.sqrt(np.sum(a * a, axis=(-2, -1)))


def spd_sqrt(a: np.ndarray, kappa0: float = 0.0, tol: float = 1e-9) -> np.ndarray:
    """Symmetric square root of a symmetric matrix with spectrum >= kappa0.

    Raises EllipticityError when an eigenvalue falls below kappa0 - tol.
    Negative eigenvalues within the tolerance are clipped at zero before the
    root is taken.
    """
    a = symmetrize(a)
    w, u = np.linalg.eigh(a)
    if np.min(w) < kappa0 - tol:
        raise EllipticityError(
            f"eigenvalue {np.min(w):.6g} below the declared floor {kappa0:g}")
    w = np.clip(w, 0.0, None)
    return (u * np.sqrt(w)[..., None, :]) @ np.swapaxes(u, -1, -2)


def sqrt_lipschitz_check(a: np.ndarray, a_prime: np.ndarray,
                         kappa0: float) -> np.ndarray:
    """2 sqrt(kappa0) ||sqrt(A)-sqrt(A')||_HS / ||A-A'||_HS.

    The square-root map is 1/(2 sqrt(kappa0))-Lipschitz in Hilbert-Schmidt
    norm on matrices with spectrum >= kappa0, so valid pairs return <= 1.
    Identical pairs are degenerate and come back NaN with a warning.
    """
    if kappa0 <= 0:
        raise ContractViolationError("kappa0 must be positive")
    a = symmetrize(a)
    ap = symmetrize(a_prime)
    ra = spd_sqrt(a, kappa0)
    rb = spd_sqrt(ap, kappa0)
    den = hs_norm(a - ap)
    num = hs_norm(ra - rb)
    scalar = np.ndim(den) == 0
    den_arr = np.atleast_1d(den)
    num_arr = np.atleast_1d(num)
    out = np.full(den_arr.shape, np.nan)
    ok = den_arr > 0
    out[ok] = 2.0 * np.sqrt(kappa0) * num_arr[ok] / den_arr[ok]
    if not ok.all():
        warnings.warn("identical matrices in sqrt Lipschitz check (skipped)",
                      RuntimeWarning, stacklevel=2)
    return float(out[0]) if scalar else out


def ellipticity_project(a: np.ndarray, kappa0: float, kappa1: float) -> np.ndarray:
    """Clamp the spectrum into [kappa0, kappa1]; identity on matrices in band."""
    if not 0 <= kappa0 <= kappa1:
        raise ContractViolationError("need 0 <= kappa0 <= kappa1")
    a = symmetrize(a)
    w, u = np.linalg.eigh(a)
    w = np.clip(w, kappa0, kappa1)
    return (u * w[..., None, :]) @ np.swapaxes(u, -1, -2)


def ellipticity_bounds_check(a: np.ndarray, kappa0: float, kappa1: float,
                             n_samples: int = 100, seed: int = 0,
                             tol: float = 1e-10) -> bool:
    """Check kappa0 |xi|^2 <= xi.A xi <= kappa1 |xi|^2 on random unit vectors."""
    a = np.asarray(a, dtype=float)
    d = a.shape[-1]
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((n_samples, d))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    quad = np.einsum("si,...ij,sj->...s", xi, a, xi)
    return bool(np.all(quad >= kappa0 - tol) and np.all(quad <= kappa1 + tol))
