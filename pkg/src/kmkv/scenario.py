"""Scenario configuration: TOML input, exponent validation, run reports.

Scenarios are batch descriptions; nothing here is interactive. Exponent
admissibility is checked at load time and every violation message quotes the
inequality it enforces.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field as dataclass_field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coefficients import CoefficientSpec, make_preset
from .errors import PreconditionError, SchemaError
from .fields import reciprocal
from .rng import component_seed

REPORT_SCHEMA_VERSION = 1

__all__ = [
    "Scenario",
    "RunReport",
    "load_scenario",
    "validate_exponents",
    "scenario_hash",
    "compare_reports",
]


@dataclass
class Scenario:
    name: str
    d: int
    initial_law: dict
    preset: str
    preset_params: dict
    grid: dict                   # nx, nv, lx, lv
    particles: dict              # n, levels, seeds, bandwidth_scale
    schedule: dict               # horizon, dt, snapshots
    diagnostics: dict            # toggles + exponent choices
    master_seed: int = 0

    def coefficient_spec(self) -> CoefficientSpec:
        return make_preset(self.preset, d=self.d, **self.preset_params)

    def seed_for(self, component: str) -> int:
        return component_seed(self.master_seed, component)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "d": self.d,
            "initial_law": self.initial_law,
            "preset": self.preset,
            "preset_params": self.preset_params,
            "grid": self.grid,
            "particles": self.particles,
            "schedule": self.schedule,
            "diagnostics": self.diagnostics,
            "master_seed": self.master_seed,
        }


def scenario_hash(scenario: Scenario) -> str:
    payload = json.dumps(scenario.as_dict(), sort_keys=True)
    return hashlib.sha256(payload.encode("utf8")).hexdigest()[:16]


def _kinetic_a(d: int) -> np.ndarray:
    return np.array([3.0] * d + [1.0] * d)


def validate_exponents(diag: dict, d: int) -> None:
    """Reject inadmissible exponent choices, naming the failed inequality."""
    av = _kinetic_a(d)
    kry = diag.get("krylov")
    if kry:
        q0 = float(kry.get("q0", 1.5))
        p0 = np.broadcast_to(np.asarray(kry.get("p0", 16.0), dtype=float), (2 * d,))
        alpha0 = float(kry.get("alpha0", 0.0))
        if not (0.0 <= alpha0 < 1.0):
            raise PreconditionError("krylov exponents: need α₀ ∈ [0, 1)")
        if not (1.0 - alpha0 < 2.0 / q0):
            raise PreconditionError(
                "krylov exponents violate \"1 − α₀ < 2/q₀\"")
        if not (2.0 / q0 + float(av @ reciprocal(p0)) < 2.0 - 2.0 * alpha0):
            raise PreconditionError(
                "krylov exponents violate \"2/q₀ + a·(1/p₀) < 2 − 2α₀\"")
    drift = diag.get("drift_norm")
    if drift:
        q1 = float(drift.get("q1", 3.0))
        p1 = np.broadcast_to(np.asarray(drift.get("p1", 16.0), dtype=float), (2 * d,))
        inv_p1 = reciprocal(p1)
        if not (float(av @ inv_p1) + 2.0 / q1 < 1.0):
            raise PreconditionError(
                "drift exponents violate \"2/q₁ + a·(1/p₁) < 1\"")
        if drift.get("strict", False) and not np.all(inv_p1 < 0.5 - 1.0 / q1):
            raise PreconditionError(
                "drift exponents violate \"1/p₁ < (1/2 − 1/q₁)·1\"")
    table = diag.get("besov_table")
    if table:
        for row in table.get("rows", []):
            q = float(row["q"])
            p = np.broadcast_to(np.asarray(row["p"], dtype=float), (2 * d,))
            alpha = float(row["alpha"])
            if not (2.0 / q < 1.0 + alpha):
                raise PreconditionError(
                    "regularity table row violates \"2/q < 1 + α\"")
            if not (2.0 / q + float(av @ (reciprocal(p) - 1.0)) > 2.0 * alpha):
                raise PreconditionError(
                    "regularity table row violates \"2/q + a·(1/p − 1) > 2α\"")


def load_scenario(path) -> Scenario:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    try:
        sc = raw["scenario"]
        d = int(sc.get("d", 1))
        scenario = Scenario(
            name=sc.get("name", "unnamed"),
            d=d,
            initial_law=dict(raw.get("initial", {"type": "gaussian"})),
            preset=raw["coefficients"]["preset"],
            preset_params=dict(raw["coefficients"].get("params", {})),
            grid=dict(raw.get("grid", {})),
            particles=dict(raw.get("particles", {})),
            schedule=dict(raw["schedule"]),
            diagnostics=dict(raw.get("diagnostics", {})),
            master_seed=int(sc.get("seed", 0)),
        )
    except KeyError as exc:
        raise SchemaError(f"scenario file missing required table/key: {exc}") from exc
    scenario.coefficient_spec()   # preset must resolve
    validate_exponents(scenario.diagnostics, scenario.d)
    return scenario


@dataclass
class RunReport:
    schema_version: int
    scenario_hash: str
    seed: int
    snapshots: list = dataclass_field(default_factory=list)
    krylov: dict | None = None
    degiorgi: dict | None = None
    stability: dict | None = None
    solver: dict | None = None
    threads: int = 1

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": self.schema_version,
            "scenario_hash": self.scenario_hash,
            "seed": self.seed,
            "snapshots": self.snapshots,
            "krylov": self.krylov,
            "degiorgi": self.degiorgi,
            "stability": self.stability,
            "solver": self.solver,
            "threads": self.threads,
        }, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        data = json.loads(text)
        if data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise SchemaError(
                f"unsupported report schema {data.get('schema_version')}")
        return cls(**data)


def _flatten(prefix: str, obj, out: dict) -> None:
    if isinstance(obj, dict):
        for key, val in obj.items():
            _flatten(f"{prefix}.{key}" if prefix else str(key), val, out)
    elif isinstance(obj, list):
        for i, val in enumerate(obj):
            _flatten(f"{prefix}[{i}]", val, out)
    elif isinstance(obj, (int, float)) and not isinstance(obj, bool):
        out[prefix] = float(obj)


def compare_reports(a: RunReport, b: RunReport) -> dict:
    """Per-metric numeric deltas (b minus a) for two same-schema reports."""
    if a.schema_version != b.schema_version:
        raise SchemaError("report schema versions differ")
    flat_a: dict = {}
    flat_b: dict = {}
    _flatten("", json.loads(a.to_json()), flat_a)
    _flatten("", json.loads(b.to_json()), flat_b)
    keys = sorted(set(flat_a) & set(flat_b))
    return {k: flat_b[k] - flat_a[k] for k in keys}
