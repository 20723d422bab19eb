"""De Giorgi-type iteration lemmas and truncation-energy certificates.

The certificate fitter probes the class inequality on a finite lattice of
nested cylinders and truncation levels; it certifies the inequality on the
probed points only, which is stated plainly in the reports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import ContractViolationError, PreconditionError
from .fields import KineticCylinder, SampledField, as_exponents
from .norms import mixed_lp_norm

__all__ = [
    "IterationResult",
    "iterate_to_zero",
    "check_iteration_bound",
    "absorb_lemma_check",
    "TruncationEnergy",
    "DeGiorgiCertificate",
    "fit_certificate",
    "local_bound_check",
    "DEFAULT_INDEX_FAMILY",
]


@dataclass
class IterationResult:
    sequence: np.ndarray
    verdict: str            # "to-zero" | "diverges" | "stalled"
    threshold: float

    @property
    def converged(self) -> bool:
        return self.verdict == "to-zero"


def iteration_threshold(c0: float, lam: float, delta: float) -> float:
    """Largest starting value guaranteed to drive the recursion to zero."""
    return (c0 * lam ** ((1.0 + delta) / delta)) ** (-1.0 / delta)


def iterate_to_zero(a1: float, c0: float, lam: float, delta: float,
                    n_max: int = 200, tol: float = 1e-8) -> IterationResult:
    """Run the extremal recursion a_{n+1} = c0 lam^n a_n^{1+delta}.

    The verdict is "to-zero" once the tail drops below ``tol`` and must hold
    whenever a1 is at or below the closed-form threshold.
    """
    if not (c0 > 1.0 and lam > 1.0 and delta > 0.0):
        raise PreconditionError("iteration lemma needs c0 > 1, lam > 1, delta > 0")
    if a1 < 0:
        raise ContractViolationError("sequence terms must be nonnegative")
    seq = [float(a1)]
    a = float(a1)
    verdict = "stalled"
    for n in range(1, n_max + 1):
        if a > 1e100:   # next power would overflow; call it divergent
            verdict = "diverges"
            seq.append(float("inf"))
            break
        with np.errstate(over="ignore"):
            a = float(c0 * lam**n * np.float64(a) ** (1.0 + delta))
        if not np.isfinite(a):
            verdict = "diverges"
            seq.append(float("inf"))
            break
        seq.append(a)
        if a < tol:
            verdict = "to-zero"
            break
    return IterationResult(np.asarray(seq), verdict,
                           iteration_threshold(c0, lam, delta))


def check_iteration_bound(sequence, c0: float, lam: float, delta: float,
                          tol: float = 1e-12) -> list:
    """Term-by-term audit of a_{n+1} <= c0 lam^n a_n^{1+delta} on given data.

    Returns the indices n (1-based) where the bound fails; empty means the
    sequence genuinely sits in the iteration class.
    """
    seq = np.asarray(sequence, dtype=float)
    if np.any(seq < 0):
        raise ContractViolationError("sequence terms must be nonnegative")
    bad = []
    for n in range(1, seq.size):
        bound = c0 * lam**n * seq[n - 1] ** (1.0 + delta)
        if seq[n] > bound * (1.0 + tol):
            bad.append(n)
    return bad


def absorb_lemma_check(taus, h_values, theta: float, alpha: float,
                       a_coef: float, b_coef: float) -> float:
    """Endpoint bound for a function absorbing a theta fraction of itself.

    First verifies h(tau) <= theta h(tau') + (tau'-tau)^{-alpha} A + B on
    every sampled pair tau < tau' (precondition, not assumed), then returns
    h(tau_1) / ((tau_2-tau_1)^{-alpha} A + B).
    """
    taus = np.asarray(taus, dtype=float)
    h = np.asarray(h_values, dtype=float)
    if taus.ndim != 1 or taus.size < 2 or np.any(np.diff(taus) <= 0):
        raise ContractViolationError("need strictly increasing sample points")
    if not (0.0 < theta < 1.0):
        raise PreconditionError("absorption factor theta must lie in (0,1)")
    if np.any(h < 0):
        raise ContractViolationError("h must be nonnegative")
    for i in range(taus.size):
        for j in range(i + 1, taus.size):
            gap = taus[j] - taus[i]
            rhs = theta * h[j] + gap ** (-alpha) * a_coef + b_coef
            if h[i] > rhs * (1.0 + 1e-9):
                raise PreconditionError(
                    f"absorption hypothesis fails at pair ({taus[i]:g}, {taus[j]:g}): "
                    f"{h[i]:.6g} > {rhs:.6g}")
    denom = (taus[-1] - taus[0]) ** (-alpha) * a_coef + b_coef
    if denom == 0.0:
        raise ContractViolationError("degenerate endpoint bound (A = B = 0)")
    return float(h[0] / denom)


@dataclass
class TruncationEnergy:
    """Dyadic truncation ladder kappa_n = kappa (1 - 2^{1-n}) on shrinking
    cylinders tau_n = tau + (sigma - tau) 2^{1-n}."""

    kappa: float
    tau: float
    sigma: float
    levels: np.ndarray = dataclass_field(default=None)
    radii: np.ndarray = dataclass_field(default=None)

    def __post_init__(self):
        if not (0 < self.tau < self.sigma):
            raise ContractViolationError("need 0 < tau < sigma")

    def ladder(self, n_terms: int):
        n = np.arange(1, n_terms + 1)
        kap = self.kappa * (1.0 - 2.0 ** (1.0 - n))
        rad = self.tau + (self.sigma - self.tau) * 2.0 ** (1.0 - n)
        self.levels = kap
        self.radii = rad
        return kap, rad

    def energies(self, field: SampledField, center, p, n_terms: int = 6):
        """||1_{Q_{tau_n}} (u - kappa_n)^+||_p along the ladder."""
        kap, rad = self.ladder(n_terms)
        d = (field.ndim - 1) // 2
        out = []
        for k, r in zip(kap, rad):
            cyl = KineticCylinder(center[0], center[1:1 + d], center[1 + d:], r)
            sl = cyl.slices(field)
            trunc = np.clip(field.values[sl] - k, 0.0, None)
            out.append(mixed_lp_norm(trunc, as_exponents(p, field.ndim),
                                     field.spacings))
        return np.asarray(out)


DEFAULT_INDEX_FAMILY = (
    (2.0, 2.0),       # energy-type pair (q over t, p over z)
    (np.inf, 2.0),
    (2.0, np.inf),
)


@dataclass
class DeGiorgiCertificate:
    indices: list                 # [(q, p_scalar or tuple)]
    split: int                    # first `split` indices weight truncations
    lam: float
    level_a: float                # inhomogeneity weight
    constants: dict               # per-index measured constants
    lattice: dict                 # probed (tau, sigma, kappa) values
    probe_indices: list = dataclass_field(default_factory=list)

    def max_constant(self) -> float:
        vals = [v for v in self.constants.values() if np.isfinite(v)]
        return max(vals) if vals else 0.0

    def finite(self) -> bool:
        return all(np.isfinite(v) for v in self.constants.values())

    def to_json(self) -> str:
        return json.dumps({
            "indices": [list(np.atleast_1d(i)) for i in self.indices],
            "split": self.split,
            "lambda": self.lam,
            "inhomogeneity": self.level_a,
            "constants": {k: v for k, v in self.constants.items()},
            "lattice": {k: list(v) for k, v in self.lattice.items()},
        }, sort_keys=True)


def _cyl_norm(field: SampledField, center: np.ndarray, r: float, q, p,
              kappa: float, indicator_only: bool) -> float:
    d = (field.ndim - 1) // 2
    cyl = KineticCylinder(center[0], center[1:1 + d], center[1 + d:], r)
    sl = cyl.slices(field)
    if any(s.stop <= s.start for s in sl):
        return 0.0
    sub = field.values[sl]
    if indicator_only:
        data = (sub > kappa).astype(float)
    else:
        data = np.clip(sub - kappa, 0.0, None)
    exps = np.concatenate([[float(q)], as_exponents(p, 2 * d)])
    return mixed_lp_norm(data, exps, field.spacings)


def fit_certificate(field: SampledField, center, lam: float = 2.0,
                    level_a: float = 1.0, indices=DEFAULT_INDEX_FAMILY,
                    split: int = 1, probe_indices=None, tau_grid=None,
                    kappa_count: int = 6, kappas=None) -> DeGiorgiCertificate:
    """Measure the smallest constants C_p of the truncation-energy inequality.

    For each probe index (q, p) and lattice point tau < sigma, kappa >= 0:

        (sigma - tau)^lam ||1_{Q_tau}(u-kappa)^+||_{q,p}
            <= C sum_{i<split} ||1_{Q_sigma}(u-kappa)^+||_{q_i,p_i}
               + A sum_{i>=split} ||1_{u>kappa, Q_sigma}||_{q_i,p_i}

    Probes where both sides vanish are skipped; nesting guarantees the left
    side vanishes whenever the right does on consistent data.
    """
    center = np.asarray(center, dtype=float)
    d = (field.ndim - 1) // 2
    if field.ndim != 2 * d + 1:
        raise ContractViolationError("certificate fitter expects a (t, x.., v..) field")
    taus = np.asarray(tau_grid if tau_grid is not None
                      else np.arange(1.0, 2.0 + 1e-9, 0.125))
    if kappas is None:
        top = float(np.max(field.values))
        if top <= 0:
            kappas = np.array([0.0])
        else:
            kappas = top * 2.0 ** (-np.arange(1, kappa_count + 1, dtype=float))
    else:
        kappas = np.asarray(kappas, dtype=float)
    probe_indices = list(probe_indices) if probe_indices is not None else [(2.0, 2.0)]

    constants = {}
    for q_probe, p_probe in probe_indices:
        worst = 0.0
        for i, tau in enumerate(taus[:-1]):
            for sigma in taus[i + 1:]:
                for kappa in kappas:
                    lhs = (sigma - tau) ** lam * _cyl_norm(
                        field, center, tau, q_probe, p_probe, kappa, False)
                    rhs = 0.0
                    for k, (qi, pi) in enumerate(indices):
                        term = _cyl_norm(field, center, sigma, qi, pi, kappa,
                                         indicator_only=(k >= split))
                        rhs += term if k < split else level_a * term
                    if lhs == 0.0:
                        continue
                    if rhs == 0.0:
                        worst = float("inf")
                    else:
                        worst = max(worst, lhs / rhs)
        constants[f"q{q_probe:g}_p{p_probe:g}"] = worst
    return DeGiorgiCertificate(
        indices=list(indices), split=split, lam=lam, level_a=level_a,
        constants=constants,
        lattice={"tau": taus.tolist(), "kappa": kappas.tolist()},
        probe_indices=probe_indices,
    )


def local_bound_check(field: SampledField, certificate: DeGiorgiCertificate,
                      p, tau: float, sigma: float, gamma: float = 4.0,
                      center=None) -> float:
    """Ratio of the inner sup bound to its certified right-hand side.

    LHS = ||u^+ 1_{Q_tau}||_inf; RHS = (sigma-tau)^{-gamma} ||u^+ 1_{Q_sigma}||_p
    + A. The ratio is scale covariant: scaling u and A together leaves it
    unchanged.
    """
    if not (0 < tau < sigma):
        raise ContractViolationError("need 0 < tau < sigma")
    if not certificate.finite():
        raise ContractViolationError("certificate carries no finite constants")
    d = (field.ndim - 1) // 2
    center = (np.zeros(1 + 2 * d) if center is None
              else np.asarray(center, dtype=float))
    lhs = _cyl_norm(field, center, tau, np.inf,
                    [np.inf] * (2 * d), 0.0, False)
    exps_p = as_exponents(p, 1 + 2 * d)
    cyl_norm = _cyl_norm(field, center, sigma, exps_p[0], exps_p[1:], 0.0, False)
    rhs = (sigma - tau) ** (-gamma) * cyl_norm + certificate.level_a
    if rhs == 0.0:
        if lhs == 0.0:
            return 0.0
        raise ContractViolationError("inconsistent bound: zero RHS with nonzero LHS")
    return float(lhs / rhs)
