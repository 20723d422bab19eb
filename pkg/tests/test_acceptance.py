"""Acceptance suite: one test per criterion, fixed seeds, pinned tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to get one PASS line per
criterion. Shared solver runs live in module-scoped fixtures.
"""

import time

import numpy as np
import pytest

from kmkv import (DyadicPartition, GridDensity, GridGeometry, Mollifier,
                  SampledField, backward_kolmogorov_solve, bernstein_check,
                  besov_norm, bony_paraproducts, difference_norm,
                  duality_check, fpk_solve, initial_ensemble, iterate_to_zero,
                  kde_on_grid, krylov_check, semigroup_apply, simulate,
                  sqrt_lipschitz_check, stability_sweep)
from kmkv.coefficients import (bounded_smooth_drift, constant_diffusion,
                               density_lipschitz_drift)
from kmkv.degiorgi import absorb_lemma_check, iteration_threshold
from kmkv.fpk import cfl_limit
from kmkv.matrices import symmetrize
from kmkv.scenario import validate_exponents

A0 = 0.5
HORIZON = 1.0
SIGMA0 = 0.25


def report(num, text):
    print(f"\nACCEPTANCE {num:2d} PASS: {text}")


# ---------------------------------------------------------------------------
# Shared runs
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def oracle_setup():
    """Criterion 1/2/10 workhorse: driftless a = 1/2 run on the 128^2 grid."""
    geom = GridGeometry(d=1, nx=128, nv=128, lx=6.0, lv=6.0)
    spec = constant_diffusion(d=1, a0=A0)
    rho0 = GridDensity(0.0, geom.gaussian(0.0, SIGMA0), geom)
    dt = HORIZON / 128
    start = time.time()
    run = fpk_solve(rho0, spec, HORIZON, dt)
    elapsed = time.time() - start
    oracle = semigroup_apply(geom.to_field(rho0.rho), HORIZON, diffusion=A0,
                             mode="density")
    run_half = fpk_solve(rho0, spec, HORIZON, dt / 2)
    return {"geom": geom, "rho0": rho0, "run": run, "run_half": run_half,
            "oracle": oracle, "elapsed": elapsed, "dt": dt}


@pytest.fixture(scope="module")
def crossval_setup():
    """Criterion 3/7/10: bounded smooth drift, grid vs particles, refined grid."""
    geom = GridGeometry(d=1, nx=128, nv=128, lx=6.0, lv=6.0)
    spec = bounded_smooth_drift(d=1, a0=A0, lx=6.0)
    law = {"type": "gaussian", "mean": 0.0, "std": 0.6}
    snap_times = list(np.linspace(0.0, HORIZON, 11))
    run = fpk_solve(GridDensity(0.0, geom.gaussian(0.0, 0.6), geom), spec,
                    HORIZON, HORIZON / 128, snapshot_times=snap_times)

    geom_fine = GridGeometry(d=1, nx=192, nv=192, lx=6.0, lv=6.0)
    run_fine = fpk_solve(GridDensity(0.0, geom_fine.gaussian(0.0, 0.6),
                                     geom_fine), spec, HORIZON, HORIZON / 288,
                         snapshot_times=snap_times)

    kde = {}
    for n, eps in ((100_000, 0.45), (400_000, 0.36)):
        ens = initial_ensemble(n, 1, law, seed=2024, level=8)
        sim = simulate(ens, spec, HORIZON, 0.01)
        kde[n] = kde_on_grid(sim.snapshots[-1], geom, Mollifier(eps=eps, m=2))
    return {"geom": geom, "geom_fine": geom_fine, "run": run,
            "run_fine": run_fine, "kde": kde, "law": law, "spec": spec}


# ---------------------------------------------------------------------------
# 1. Kolmogorov Gaussian oracle
# ---------------------------------------------------------------------------

def test_criterion_01_kolmogorov_gaussian_oracle(oracle_setup):
    cov = oracle_setup["run"].snapshots[-1].moments()["cov"]
    t = HORIZON
    # subtract the freely transported near-delta initial covariance
    var_v = cov[1, 1] - SIGMA0**2
    var_x = cov[0, 0] - SIGMA0**2 * (1.0 + t**2)
    cov_xv = cov[0, 1] - t * SIGMA0**2
    assert var_v == pytest.approx(2 * A0 * t, rel=0.02)
    assert var_x == pytest.approx(2 * A0 * t**3 / 3, rel=0.02)
    assert cov_xv == pytest.approx(A0 * t**2, rel=0.02)
    assert oracle_setup["elapsed"] < 30.0
    report(1, f"covariances ({var_v:.4f}, {var_x:.4f}, {cov_xv:.4f}) match "
              f"(1, 1/3, 1/2) within 2% in {oracle_setup['elapsed']:.1f}s")


# ---------------------------------------------------------------------------
# 2. Solver-semigroup equivalence
# ---------------------------------------------------------------------------

def test_criterion_02_solver_semigroup_equivalence(oracle_setup):
    geom = oracle_setup["geom"]
    oracle = oracle_setup["oracle"].values
    l1 = np.abs(oracle_setup["run"].snapshots[-1].rho - oracle).sum() \
        * geom.cell_volume
    l1_half = np.abs(oracle_setup["run_half"].snapshots[-1].rho - oracle).sum() \
        * geom.cell_volume
    assert l1 <= 0.02
    assert l1_half <= 0.5 * l1
    report(2, f"L1 vs Gaussian flow {l1:.5f} <= 2%; halving dt gives "
              f"{l1_half:.5f} ({l1_half / l1:.2f}x)")


# ---------------------------------------------------------------------------
# 3. Particle-grid cross validation
# ---------------------------------------------------------------------------

def test_criterion_03_particle_grid_cross_validation(crossval_setup):
    geom = crossval_setup["geom"]
    rho_final = crossval_setup["run"].snapshots[-1].rho
    l1 = {n: float(np.abs(k.rho - rho_final).sum() * geom.cell_volume)
          for n, k in crossval_setup["kde"].items()}
    assert l1[100_000] <= 0.05
    assert l1[400_000] < l1[100_000]
    report(3, f"L1(KDE, grid) = {l1[100_000]:.4f} at N=1e5, "
              f"{l1[400_000]:.4f} at N=4e5")


# ---------------------------------------------------------------------------
# 4. Matrix square-root Lipschitz bound
# ---------------------------------------------------------------------------

def test_criterion_04_sqrt_lipschitz():
    closed = sqrt_lipschitz_check(np.diag([1.0, 4.0]), np.diag([4.0, 1.0]),
                                  kappa0=1.0)
    assert closed == pytest.approx(2.0 / 3.0, abs=1e-12)

    rng = np.random.default_rng(42)
    kappa0 = 0.5

    def batch(n):
        qs = np.linalg.qr(rng.standard_normal((n, 3, 3)))[0]
        eigs = rng.uniform(kappa0, 5.0, size=(n, 3))
        return symmetrize(np.einsum("nij,nj,nkj->nik", qs, eigs, qs))

    ratios = sqrt_lipschitz_check(batch(10_000), batch(10_000), kappa0)
    worst = float(np.nanmax(ratios))
    assert worst <= 1.0 + 1e-9
    report(4, f"10^4 random SPD pairs: max ratio {worst:.12f} <= 1 + 1e-9; "
              f"closed form 2/3 exact")


# ---------------------------------------------------------------------------
# 5. Iteration and absorption lemmas
# ---------------------------------------------------------------------------

def test_criterion_05_iteration_lemmas():
    assert iteration_threshold(2.0, 2.0, 1.0) == pytest.approx(1.0 / 8.0)
    res_conv = iterate_to_zero(1.0 / 8.0, 2.0, 2.0, 1.0)
    assert res_conv.converged and res_conv.sequence[-1] < 1e-8
    res_div = iterate_to_zero(1.0, 2.0, 2.0, 1.0)
    assert res_div.verdict == "diverges"

    rng = np.random.default_rng(5)
    taus = np.linspace(1.0, 2.0, 17)
    ratios = []
    for _ in range(50):
        a_coef = rng.uniform(0.2, 2.0)
        b_coef = rng.uniform(0.0, 2.0)
        shift = rng.uniform(0.05, 0.5)
        h = a_coef / (taus[-1] + shift - taus) ** 2 + b_coef
        ratios.append(absorb_lemma_check(taus, h, theta=0.5, alpha=2.0,
                                         a_coef=a_coef, b_coef=b_coef))
    assert np.all(np.isfinite(ratios)) and max(ratios) <= 5.0
    report(5, f"threshold start -> {res_conv.sequence[-1]:.2e}; unit start "
              f"diverges; absorption ratios <= {max(ratios):.2f}")


# ---------------------------------------------------------------------------
# 6. Dyadic decomposition machinery
# ---------------------------------------------------------------------------

def test_criterion_06_besov_machinery():
    n = 256
    sp = 2 * np.pi / n
    part = DyadicPartition((n,), (sp,), (1.0,))
    x = sp * np.arange(n)

    total = np.zeros(n)
    for j in range(part.j_max + 1):
        total = total + part.phi(j)
    tele = float(np.max(np.abs(total - part.cumulative(part.j_max))))
    assert tele <= 1e-10

    rng = np.random.default_rng(210)
    corpus = []
    for _ in range(20):
        f = np.zeros(n)
        for _ in range(6):
            k = int(rng.integers(1, 100))
            f += rng.standard_normal() / (1 + k**0.7) * np.cos(
                k * x + rng.uniform(0, 2 * np.pi))
        f += rng.uniform(0.5, 2.0) * np.exp(
            -0.5 * ((x - np.pi) / rng.uniform(0.2, 1.0)) ** 2)
        corpus.append(SampledField(f, (sp,), (0.0,)))

    bern = 0.0
    for f in corpus:
        for j in range(7):
            for k in (1, 2):
                r = bernstein_check(f, j, k, 0, 2.0, 2.0, part)
                if np.isfinite(r.ratio):
                    bern = max(bern, r.ratio)
            r = bernstein_check(f, j, 1, 0, 1.0, 2.0, part)
            if np.isfinite(r.ratio):
                bern = max(bern, r.ratio)
    assert bern <= 8.0

    recon = 0.0
    dual = 0.0
    band = []
    for f, g in zip(corpus[:10], corpus[10:]):
        lo, res, hi = bony_paraproducts(f, g, part)
        recon = max(recon, float(np.max(np.abs(
            lo.values + res.values + hi.values - f.values * g.values))))
        dual = max(dual, duality_check(f, g, 0.3, 0.7, 2.0, 2.0, part).ratio)
        band.append(difference_norm(f, 0.5, 2.0, 1.0)
                    / besov_norm(f, 0.5, 2.0, part).norm)
    assert recon <= 1e-8
    assert np.isfinite(dual) and dual <= 6.0
    band = np.array(band)
    assert np.all(band > 0.2) and np.all(band < 40.0)
    report(6, f"telescoping {tele:.1e}; bernstein <= {bern:.2f}; paraproduct "
              f"residual {recon:.1e}; duality <= {dual:.2f}; "
              f"difference/dyadic band [{band.min():.2f}, {band.max():.2f}]")


# ---------------------------------------------------------------------------
# 7. Regularity table under refinement
# ---------------------------------------------------------------------------

def test_criterion_07_regularity_table_refinement(crossval_setup):
    rows = [
        {"q": 1.5, "p": 1.05, "alpha": 0.45},
        {"q": 2.0, "p": 1.2, "alpha": 0.1},
        {"q": 1.2, "p": 1.02, "alpha": 0.7},
    ]
    validate_exponents({"besov_table": {"rows": rows}}, 1)

    def table(run, geom):
        part = DyadicPartition(geom.shape, geom.spacings(), (3.0, 1.0))
        times = np.array([s.t for s in run.snapshots])
        dt_snap = float(np.min(np.diff(times)))
        out = []
        for row in rows:
            per_t = np.array([
                besov_norm(s.rho, row["alpha"], row["p"], part).norm
                for s in run.snapshots])
            out.append(float((np.sum(per_t ** row["q"]) * dt_snap)
                             ** (1.0 / row["q"])))
        return np.array(out)

    coarse = table(crossval_setup["run"], crossval_setup["geom"])
    fine = table(crossval_setup["run_fine"], crossval_setup["geom_fine"])
    ratios = fine / coarse
    assert np.all(ratios <= 1.5)
    assert np.all(ratios >= 1.0 / 1.5)
    report(7, "density norm table stable under refinement: ratios "
              + np.array2string(ratios, precision=3))


# ---------------------------------------------------------------------------
# 8. Short-time path-integral diagnostic
# ---------------------------------------------------------------------------

def test_criterion_08_krylov_diagnostic():
    geom = GridGeometry(d=1, nx=64, nv=64, lx=6.0, lv=6.0)
    spec = bounded_smooth_drift(d=1, a0=A0, lx=6.0)
    law = {"type": "gaussian", "mean": 0.0, "std": 2.0}
    bumps = [
        lambda t, z: np.exp(-np.sum(z**2, axis=-1) / (2 * 0.8**2)),
        lambda t, z: np.exp(-((z[..., 0] - 0.5) ** 2 + z[..., 1] ** 2)
                            / (2 * 1.2**2)),
        lambda t, z: (1.0 + 0.5 * np.cos(np.pi * t))
        * np.exp(-np.sum(z**2, axis=-1)),
    ]
    thetas = []
    all_ratios = []
    for level in (4, 8, 16):
        ens = initial_ensemble(20_000, 1, law, seed=303, level=level)
        sim = simulate(ens, spec, 0.5, 0.01,
                       mollifier=Mollifier.from_level(level, 2),
                       store_path=True)
        for f in bumps:
            rep = krylov_check(sim.path_times, sim.path, f, geom, 1.5, 16.0,
                               0.0, [0.1, 0.05, 0.025], 0.5)
            thetas.append(rep.theta)
            all_ratios.extend(rep.ratios)
    thetas = np.array(thetas)
    all_ratios = np.array(all_ratios)
    assert np.all(thetas > 0.0)
    assert np.all(np.isfinite(all_ratios)) and np.max(all_ratios) <= 1.0
    report(8, f"fitted theta in [{thetas.min():.2f}, {thetas.max():.2f}] > 0; "
              f"ratios <= {all_ratios.max():.3f} across levels 4/8/16")


# ---------------------------------------------------------------------------
# 9. Mollification-level stability (uniqueness surrogate)
# ---------------------------------------------------------------------------

def test_criterion_09_stability_sweep():
    geom = GridGeometry(d=1, nx=128, nv=128, lx=6.0, lv=6.0)
    # heavy tails keep every truncation level visible above the KDE noise
    law = {"type": "gaussian", "mean": 0.0, "std": 4.0}
    seeds = [11, 12, 13]
    levels = [4, 8, 16, 32]
    lipschitz = stability_sweep(density_lipschitz_drift(d=1), levels, seeds,
                                10_000, 0.5, 0.01, geom, law=law,
                                bandwidth_scale=4.0)
    linear = stability_sweep(constant_diffusion(d=1, a0=A0), levels, seeds,
                             10_000, 0.5, 0.01, geom, law=law,
                             bandwidth_scale=4.0)
    tol = 1e-12
    for seed in seeds:
        for rep in (lipschitz, linear):
            assert np.all(np.diff(rep.l1[seed]) <= tol), rep.l1[seed]
            assert np.all(np.diff(rep.w2[seed]) <= tol), rep.w2[seed]
        # level-free dynamics contract tighter between consecutive levels
        lin = np.asarray(linear.l1[seed])
        lip = np.asarray(lipschitz.l1[seed])
        lin_ratio = lin[1:] / lin[:-1]
        lip_ratio = lip[1:] / lip[:-1]
        assert np.all(lin_ratio <= lip_ratio + 1e-9)
    report(9, "distances decrease monotonically for every seed; "
              f"e.g. L1 (H3) = {['%.2e' % v for v in lipschitz.l1[seeds[0]]]}, "
              f"L1 (linear) = {['%.2e' % v for v in linear.l1[seeds[0]]]}")


# ---------------------------------------------------------------------------
# 10. Conservation and positivity
# ---------------------------------------------------------------------------

def test_criterion_10_conservation_positivity(oracle_setup, crossval_setup):
    runs = [oracle_setup["run"], oracle_setup["run_half"],
            crossval_setup["run"], crossval_setup["run_fine"]]
    worst_mass = max(r.max_mass_error for r in runs)
    worst_clip = max(r.clip_mass_total for r in runs)
    assert worst_mass <= 1e-6
    assert worst_clip <= 1e-6
    for r in runs:
        assert min(np.min(s.rho) for s in r.snapshots) >= -1e-12
    report(10, f"all runs: |mass-1| <= {worst_mass:.2e}, clipped mass "
               f"<= {worst_clip:.2e}")


# ---------------------------------------------------------------------------
# 11. Path-martingale check through the backward equation
# ---------------------------------------------------------------------------

def test_criterion_11_martingale_check():
    from scipy.interpolate import RegularGridInterpolator

    geom = GridGeometry(d=1, nx=128, nv=128, lx=6.0, lv=6.0)
    spec = constant_diffusion(d=1, a0=A0)
    dt_max = cfl_limit(geom, spec.kappa1)
    steps = int(np.ceil(HORIZON / dt_max))
    dt = HORIZON / steps

    z = geom.z_mesh()
    f_grid = np.exp(-(z[..., 0] ** 2 + z[..., 1] ** 2) / (2 * 1.2**2))
    abar = np.full(geom.x_shape + (1, 1), A0)
    bbar = np.zeros(geom.shape + (1,))
    u_nodes = backward_kolmogorov_solve(lambda t: f_grid, geom, (abar, bbar),
                                        HORIZON, dt)

    law = {"type": "gaussian", "mean": 0.0, "std": 0.5}
    ens = initial_ensemble(10_000, 1, law, seed=55, level=8)
    sim = simulate(ens, spec, HORIZON, dt, store_path=True)
    path = sim.path

    def f_at(pts):
        return np.exp(-(pts[:, 0] ** 2 + pts[:, 1] ** 2) / (2 * 1.2**2))

    axes = (geom.x_coords(), geom.v_coords())

    def u_at(k, pts):
        interp = RegularGridInterpolator(axes, u_nodes[k], bounds_error=False,
                                         fill_value=0.0)
        return interp(pts)

    checkpoints = [int(round(c * steps)) for c in (0.2, 0.4, 0.6, 0.8, 1.0)]
    running = np.zeros(ens.n)
    m_prev = u_at(0, path[0])
    k_prev = 0
    margins = []
    for kc in checkpoints:
        for k in range(k_prev, kc):
            running += f_at(path[k]) * dt
        m_now = u_at(kc, path[kc]) - running
        incr = m_now - m_prev
        mean = incr.mean()
        se = incr.std() / np.sqrt(ens.n)
        assert abs(mean) <= 3.0 * se, (kc, mean, se)
        margins.append(abs(mean) / se)
        m_prev = m_now
        k_prev = kc
    report(11, "conditional-mean increments flat at 5 checkpoints "
               f"(|mean|/SE = {['%.2f' % m for m in margins]}, all <= 3)")
