"""Batch front end: scenario runs, report comparison, norm queries.

Exit codes: 0 success, 2 precondition/validation failure, 3 numerical abort.
Reports are deterministic for a fixed seed (no timestamps in the payload).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .besov import DyadicPartition, besov_norm
from .errors import (BudgetExceededError, CFLError, ContractViolationError,
                     KmkvError, PreconditionError, SchemaError)
from .fields import load_field, save_ensemble, save_field
from .fpk import FPKRun, GridDensity, GridGeometry, fpk_solve
from .particles import (Mollifier, initial_ensemble, krylov_check, simulate,
                        stability_sweep)
from .scenario import (REPORT_SCHEMA_VERSION, RunReport, Scenario,
                       compare_reports, load_scenario, scenario_hash)

__all__ = ["run_scenario", "main"]


def _geometry(scenario: Scenario) -> GridGeometry:
    g = scenario.grid
    return GridGeometry(d=scenario.d, nx=int(g.get("nx", 64)),
                        nv=int(g.get("nv", 64)), lx=float(g.get("lx", 6.0)),
                        lv=float(g.get("lv", 6.0)))


def _initial_density(scenario: Scenario, geom: GridGeometry) -> GridDensity:
    law = scenario.initial_law
    if law.get("type", "gaussian") != "gaussian":
        raise PreconditionError("grid runs support gaussian initial laws")
    rho = geom.gaussian(law.get("mean", 0.0), law.get("std", 1.0))
    return GridDensity(0.0, rho, geom)


def _moments_payload(density: GridDensity) -> dict:
    mom = density.moments()
    return {"mean": [float(x) for x in mom["mean"]],
            "cov": [[float(x) for x in row] for row in mom["cov"]]}


def _besov_rows(scenario: Scenario, run: FPKRun, geom: GridGeometry) -> list:
    table = scenario.diagnostics.get("besov_table")
    if not table:
        return []
    av = np.array([3.0] * geom.d + [1.0] * geom.d)
    part = DyadicPartition(geom.shape, geom.spacings(), av)
    rows = []
    times = np.array([s.t for s in run.snapshots])
    if times.size < 2:
        return []
    dt_snap = float(np.min(np.diff(times)))
    for row in table.get("rows", []):
        q = float(row["q"])
        alpha = float(row["alpha"])
        p = np.broadcast_to(np.asarray(row["p"], dtype=float), (2 * geom.d,))
        per_t = np.array([besov_norm(s.rho, alpha, p, part).norm
                          for s in run.snapshots])
        agg = float((np.sum(per_t**q) * dt_snap) ** (1.0 / q))
        rows.append({"q": q, "p": [float(x) for x in p], "alpha": alpha,
                     "norm": agg})
    return rows


def run_scenario(scenario: Scenario, out_dir, seed=None,
                 threads: int = 1) -> RunReport:
    """Execute a scenario and emit report + artifacts under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if seed is not None:
        scenario.master_seed = int(seed)
    spec = scenario.coefficient_spec()
    geom = _geometry(scenario)
    sched = scenario.schedule
    horizon = float(sched["horizon"])
    dt = float(sched["dt"])
    snap_times = [float(t) for t in sched.get("snapshots", [])]

    run = fpk_solve(_initial_density(scenario, geom), spec, horizon, dt,
                    snapshot_times=snap_times)

    pcfg = scenario.particles
    sim = None
    mollifier = None
    if int(pcfg.get("n", 0)) > 0:
        levels = [int(x) for x in pcfg.get("levels", [8])]
        level = levels[0]
        mollifier = Mollifier.from_level(level, 2 * scenario.d,
                                         scale=float(pcfg.get("bandwidth_scale", 2.0)))
        ens0 = initial_ensemble(int(pcfg["n"]), scenario.d, scenario.initial_law,
                                scenario.seed_for("particles"), level)
        sim = simulate(ens0, spec, horizon, dt,
                       snapshot_times=[s.t for s in run.snapshots],
                       mollifier=mollifier, kde_grid=geom)

    snapshots_payload = []
    for i, snap in enumerate(run.snapshots):
        entry = {
            "t": snap.t,
            "mass": snap.mass(),
            "clip_mass": snap.clip_mass,
            "wall_mass": snap.wall_mass(),
            "moments": _moments_payload(snap),
        }
        if sim is not None and sim.kde is not None and i < len(sim.kde):
            diff = np.abs(sim.kde[i].rho - snap.rho).sum() * geom.cell_volume
            entry["l1_particle_vs_grid"] = float(diff)
        snapshots_payload.append(entry)
        save_field(out / f"density_{i:03d}.bin", snap.to_field())
    if sim is not None:
        last = sim.snapshots[-1]
        save_ensemble(out / "ensemble_final.bin", last.x, last.v, last.t,
                      last.seed, last.level)

    besov_rows = _besov_rows(scenario, run, geom)
    if besov_rows:
        for entry in snapshots_payload:
            entry["besov_table"] = besov_rows

    krylov_payload = None
    kry = scenario.diagnostics.get("krylov")
    if kry:
        n_path = int(kry.get("n_particles", 2000))
        ens0 = initial_ensemble(n_path, scenario.d, scenario.initial_law,
                                scenario.seed_for("krylov"), int(kry.get("level", 8)))
        res = simulate(ens0, spec, horizon, dt, store_path=True,
                       mollifier=Mollifier.from_level(int(kry.get("level", 8)),
                                                      2 * scenario.d))
        width = float(kry.get("bump_width", 1.0))

        def bump(t, z):
            z = np.asarray(z, dtype=float)
            r2 = np.sum(z * z, axis=-1) / width**2
            return np.exp(-0.5 * r2)

        rep = krylov_check(res.path_times, res.path, bump, geom,
                           float(kry.get("q0", 1.5)), kry.get("p0", 16.0),
                           float(kry.get("alpha0", 0.0)),
                           kry.get("deltas", [0.1, 0.05, 0.025]), horizon)
        krylov_payload = {
            "theta": rep.theta,
            "ratios": [float(r) for r in rep.ratios],
            "deltas": [float(x) for x in rep.deltas],
            "norm": rep.norm,
        }

    stability_payload = None
    stab = scenario.diagnostics.get("stability")
    if stab:
        report = stability_sweep(
            spec, stab.get("levels", [4, 8, 16]),
            [scenario.seed_for(f"stability{k}") for k in range(int(stab.get("n_seeds", 2)))],
            int(stab.get("n_particles", 2000)), horizon, dt, geom,
            law=scenario.initial_law)
        stability_payload = {
            "levels": report.levels,
            "pairs": [list(p) for p in report.pairs],
            "l1": {str(k): v for k, v in report.l1.items()},
            "w2": {str(k): v for k, v in report.w2.items()},
            "reg": report.reg,
        }

    degiorgi_payload = None
    dg = scenario.diagnostics.get("degiorgi")
    if dg:
        from .degiorgi import fit_certificate
        times = np.array([s.t for s in run.snapshots])
        if times.size >= 3 and np.allclose(np.diff(times), np.diff(times)[0]):
            stacked = np.stack([s.rho for s in run.snapshots])
            spacetime = np.concatenate([[float(np.diff(times)[0])],
                                        np.asarray(geom.spacings())])
            origins = np.concatenate([[times[0]], np.asarray(geom.origins())])
            from .fields import SampledField
            field = SampledField(stacked, tuple(spacetime), tuple(origins))
            center = [float(times[-1] / 2)] + [0.0] * (2 * geom.d)
            cert = fit_certificate(field, center,
                                   level_a=float(dg.get("inhomogeneity", 1.0)))
            degiorgi_payload = json.loads(cert.to_json())
        else:
            degiorgi_payload = {"skipped": "snapshots not uniform in time"}

    report = RunReport(
        schema_version=REPORT_SCHEMA_VERSION,
        scenario_hash=scenario_hash(scenario),
        seed=scenario.master_seed,
        snapshots=snapshots_payload,
        krylov=krylov_payload,
        degiorgi=degiorgi_payload,
        stability=stability_payload,
        solver={
            "clip_mass_total": run.clip_mass_total,
            "max_mass_error": run.max_mass_error,
            "wall_mass_max": run.wall_mass_max,
            "steps": run.steps,
            "dt": run.dt,
        },
        threads=threads,
    )
    (out / "report.json").write_text(report.to_json())
    return report


def _cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (PreconditionError, SchemaError, FileNotFoundError) as exc:
        print(f"scenario rejected: {exc}", file=sys.stderr)
        return 2
    threads = args.threads or int(os.environ.get("KMKV_THREADS", "1"))
    os.environ["KMKV_THREADS"] = str(threads)
    try:
        report = run_scenario(scenario, args.out, seed=args.seed, threads=threads)
    except (PreconditionError, SchemaError) as exc:
        print(f"precondition failure: {exc}", file=sys.stderr)
        return 2
    except (CFLError, BudgetExceededError, ContractViolationError,
            FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    print(report.to_json())
    return 0


def _cmd_compare(args) -> int:
    try:
        rep_a = RunReport.from_json(Path(args.a).read_text())
        rep_b = RunReport.from_json(Path(args.b).read_text())
        diff = compare_reports(rep_a, rep_b)
    except (SchemaError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"compare failed: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(diff, sort_keys=True, indent=1))
    return 0


def _cmd_norms(args) -> int:
    try:
        field = load_field(args.field)
        a = [float(x) for x in args.a.split(",")] if args.a else [1.0] * field.ndim
        p = [float(x) for x in args.p.split(",")] if args.p else [2.0] * field.ndim
        part = DyadicPartition(field.shape, field.spacings, a)
        report = besov_norm(field, args.s, p, part)
    except (KmkvError, FileNotFoundError, ValueError) as exc:
        print(f"norm query failed: {exc}", file=sys.stderr)
        return 2
    print(report.to_json())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kmkv",
        description="Kinetic nonlinear SDE/FPK toolbox: batch runs and diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--threads", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="diff two run reports")
    p_cmp.add_argument("a")
    p_cmp.add_argument("b")
    p_cmp.set_defaults(func=_cmd_compare)

    p_norm = sub.add_parser("norms", help="anisotropic dyadic norm of a field file")
    p_norm.add_argument("field")
    p_norm.add_argument("--s", type=float, required=True)
    p_norm.add_argument("--p", type=str, default=None)
    p_norm.add_argument("--a", type=str, default=None)
    p_norm.set_defaults(func=_cmd_norms)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
