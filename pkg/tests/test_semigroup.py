import numpy as np
import pytest

from kmkv import (ContractViolationError, DuhamelSchedule, DyadicPartition,
                  KolmogorovGaussian, SampledField, duhamel_solve,
                  semigroup_apply, smoothing_exponent_fit)


def phase_field(values_fn, n=128, half=8.0):
    sp = 2 * half / n
    org = -half + sp / 2
    coords = org + sp * np.arange(n)
    xx, vv = np.meshgrid(coords, coords, indexing="ij")
    return SampledField(values_fn(xx, vv), (sp, sp), (org, org))


def moments(field):
    x = field.coords(0)
    v = field.coords(1)
    xx, vv = np.meshgrid(x, v, indexing="ij")
    w = field.values * field.cell_volume
    total = w.sum()
    mx = np.sum(w * xx) / total
    mv = np.sum(w * vv) / total
    return {
        "mass": total,
        "mean_x": mx,
        "mean_v": mv,
        "var_x": np.sum(w * (xx - mx) ** 2) / total,
        "var_v": np.sum(w * (vv - mv) ** 2) / total,
        "cov": np.sum(w * (xx - mx) * (vv - mv)) / total,
    }


def test_kolmogorov_covariance_values():
    g = KolmogorovGaussian(t=1.0, diffusion=0.5)
    assert g.var_v == pytest.approx(1.0)
    assert g.var_x == pytest.approx(1.0 / 3.0)
    assert g.cov_xv == pytest.approx(0.5)
    c = KolmogorovGaussian(t=0.7).covariance()
    # determinant t^4 / 3 keeps the Gaussian nondegenerate
    assert np.linalg.det(c) == pytest.approx(0.7**4 / 3.0)
    assert np.all(np.linalg.eigvalsh(c) > 0)


def test_negative_time_rejected():
    f = phase_field(lambda x, v: np.exp(-(x**2 + v**2)))
    with pytest.raises(ContractViolationError):
        semigroup_apply(f, -0.1)


def test_identity_at_time_zero():
    f = phase_field(lambda x, v: np.exp(-(x**2 + v**2)))
    out = semigroup_apply(f, 0.0)
    assert np.array_equal(out.values, f.values)


def test_density_mode_moments_match_gaussian():
    # delta-ish blob evolved for t = 1 at unit diffusion: the evolved
    # covariance adds [[2/3, 1], [1, 2]] on top of the transported initial one
    s0 = 0.3
    f = phase_field(lambda x, v: np.exp(-(x**2 + v**2) / (2 * s0**2)), n=256)
    out = semigroup_apply(f, 1.0, diffusion=1.0, mode="density")
    m = moments(out)
    t = 1.0
    assert m["mass"] == pytest.approx(moments(f)["mass"], rel=1e-10)
    assert m["var_v"] == pytest.approx(s0**2 + 2 * t, rel=2e-3)
    assert m["var_x"] == pytest.approx(s0**2 + t**2 * s0**2 + 2 * t**3 / 3,
                                       rel=2e-3)
    assert m["cov"] == pytest.approx(t * s0**2 + t**2, rel=2e-3)
    assert np.min(out.values) >= -1e-12


def test_density_mode_mean_transport():
    s0 = 0.3
    x0, v0 = -0.5, 0.8
    f = phase_field(lambda x, v: np.exp(-((x - x0) ** 2 + (v - v0) ** 2)
                                        / (2 * s0**2)), n=256)
    out = semigroup_apply(f, 0.5, diffusion=0.5, mode="density")
    m = moments(out)
    assert m["mean_x"] == pytest.approx(x0 + 0.5 * v0, abs=2e-3)
    assert m["mean_v"] == pytest.approx(v0, abs=2e-3)


def quadrature_oracle(f_fn, z, t, diffusion, n_quad=241):
    """Direct Gaussian expectation E f(x + t v + G_x, v + G_v)."""
    g = KolmogorovGaussian(t, diffusion)
    cov = g.covariance()
    chol = np.linalg.cholesky(cov)
    u = np.linspace(-6.0, 6.0, n_quad)
    du = u[1] - u[0]
    uu, ww = np.meshgrid(u, u, indexing="ij")
    pts = np.stack([uu.ravel(), ww.ravel()], axis=0)
    gpts = chol @ pts
    weights = np.exp(-0.5 * (pts[0] ** 2 + pts[1] ** 2)) * du**2 / (2 * np.pi)
    x, v = z
    vals = f_fn(x + t * v + gpts[0], v + gpts[1])
    return float(np.sum(vals * weights))


def test_observable_mode_matches_quadrature_oracle():
    t, diffusion = 0.6, 1.0

    def bump(x, v):
        return np.exp(-(x**2 + v**2) / (2 * 0.5**2))

    f = phase_field(bump, n=256)
    out = semigroup_apply(f, t, diffusion, mode="observable")
    x = f.coords(0)
    v = f.coords(1)
    for ix, iv in [(128, 128), (140, 120), (118, 138)]:
        oracle = quadrature_oracle(bump, (x[ix], v[iv]), t, diffusion)
        assert out.values[ix, iv] == pytest.approx(oracle, abs=3e-6)


def test_semigroup_law():
    # field must decay below tolerance at the walls: the sheared Gaussian
    # wraps periodically where |t v| is comparable to the box
    f = phase_field(lambda x, v: np.exp(-(x**2 + v**2) / (2 * 0.5**2)))
    one = semigroup_apply(semigroup_apply(f, 0.2), 0.3)
    direct = semigroup_apply(f, 0.5)
    scale = np.max(np.abs(direct.values))
    assert np.max(np.abs(one.values - direct.values)) <= 1e-8 * scale


def test_mass_preserved_both_modes():
    f = phase_field(lambda x, v: np.exp(-(x**2 + v**2) / 2.0))
    for mode in ("observable", "density"):
        out = semigroup_apply(f, 0.9, mode=mode)
        assert out.values.sum() == pytest.approx(f.values.sum(), rel=1e-10)


def test_positivity_up_to_tolerance():
    f = phase_field(lambda x, v: np.exp(-(x**2 + v**2) / (2 * 0.4**2)))
    out = semigroup_apply(f, 1.2, mode="density")
    assert np.min(out.values) >= -1e-12 * np.max(out.values)


def test_galilean_shift_commutation():
    n, half = 128, 8.0
    sp = 2 * half / n
    f = phase_field(lambda x, v: np.exp(-(x**2 + v**2) / (2 * 0.7**2)), n=n)
    v0_cells, x0_cells = 8, 4
    v0 = v0_cells * sp
    x0 = x0_cells * sp
    t = 0.25
    shift_x_total = x0 + t * v0          # must be grid aligned
    cells_total = shift_x_total / sp
    assert cells_total == pytest.approx(round(cells_total))
    pre = np.roll(np.roll(f.values, int(round(cells_total)), axis=0),
                  v0_cells, axis=1)
    lhs = semigroup_apply(f.with_values(pre), t).values
    post = semigroup_apply(f, t).values
    rhs = np.roll(np.roll(post, x0_cells, axis=0), v0_cells, axis=1)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


# ---------------------------------------------------------------------------
# Duhamel
# ---------------------------------------------------------------------------

def test_schedule_validation():
    with pytest.raises(ContractViolationError):
        DuhamelSchedule((0.0, 0.0, 1.0))
    sched = DuhamelSchedule.uniform(2.0, 8)
    assert sched.weights.sum() == pytest.approx(2.0)


def test_duhamel_zero_source():
    f0 = phase_field(lambda x, v: np.zeros_like(x), n=32)
    sched = DuhamelSchedule.uniform(1.0, 5)
    out = duhamel_solve(lambda s: f0, sched)
    assert all(np.max(np.abs(u.values)) == 0.0 for u in out)


def test_duhamel_constant_source_grows_linearly():
    f1 = phase_field(lambda x, v: np.ones_like(x), n=32)
    sched = DuhamelSchedule.uniform(1.0, 10)
    out = duhamel_solve(lambda s: f1, sched)
    for node, u in zip(sched.nodes, out):
        assert np.allclose(u.values, node, atol=1e-9)


def test_duhamel_linear_in_source():
    rng = np.random.default_rng(0)
    base = phase_field(lambda x, v: np.exp(-(x**2 + v**2)), n=32)
    other = phase_field(lambda x, v: np.exp(-((x - 1) ** 2 + v**2)), n=32)
    sched = DuhamelSchedule.uniform(0.5, 6)
    u1 = duhamel_solve(lambda s: base, sched)[-1].values
    u2 = duhamel_solve(lambda s: other, sched)[-1].values
    u12 = duhamel_solve(
        lambda s: base.with_values(2.0 * base.values - other.values), sched)[-1].values
    assert np.allclose(u12, 2.0 * u1 - u2, atol=1e-10)


def test_duhamel_step_halving_first_order():
    source = phase_field(lambda x, v: np.exp(-(x**2 + v**2) / 2.0), n=64)

    def run(steps):
        sched = DuhamelSchedule.uniform(1.0, steps)
        return duhamel_solve(lambda s: source, sched)[-1].values

    fine = run(64)
    err8 = np.max(np.abs(run(8) - fine))
    err16 = np.max(np.abs(run(16) - fine))
    assert err16 <= 0.65 * err8


# ---------------------------------------------------------------------------
# Smoothing exponent
# ---------------------------------------------------------------------------

def multiring_field(nx=64, nv=64, gamma=0.0):
    """Flat dyadic ladder of v-modes: ring j carries one mode of gauge 2^j."""
    spx = 2 * np.pi / nx
    spv = 2 * np.pi / nv
    x = spx * np.arange(nx)
    v = spv * np.arange(nv)
    xx, vv = np.meshgrid(x, v, indexing="ij")
    vals = np.zeros_like(xx)
    for j, m in enumerate([1, 2, 4, 8, 16]):
        vals += 2.0 ** (-gamma * j) * np.cos(m * vv)
    return SampledField(vals, (spx, spv), (0.0, 0.0))


# one sample per dyadic clock: the damping of ring j turns on at t ~ 4^{-j}
RING_TIMES = 4.0 ** (-np.arange(4, -1, -1, dtype=float))


@pytest.fixture(scope="module")
def kinetic_partition():
    f = multiring_field()
    return DyadicPartition(f.shape, f.spacings, (3.0, 1.0))


def test_smoothing_fit_no_gap(kinetic_partition):
    f = multiring_field()
    fit = smoothing_exponent_fit(f, beta=0.0, gamma=0.0,
                                 partition=kinetic_partition, times=RING_TIMES)
    assert abs(fit.slope) <= 0.2
    assert fit.theory == 0.0


def test_smoothing_fit_one_derivative_gap(kinetic_partition):
    f = multiring_field()
    fit = smoothing_exponent_fit(f, beta=1.0, gamma=0.0,
                                 partition=kinetic_partition, times=RING_TIMES)
    assert fit.slope <= -0.5 + 0.1
    assert fit.theory == pytest.approx(-0.5)


def test_smoothing_fit_two_derivative_gap(kinetic_partition):
    f = multiring_field()
    fit = smoothing_exponent_fit(f, beta=2.0, gamma=0.0,
                                 partition=kinetic_partition, times=RING_TIMES)
    assert fit.slope <= -1.0 + 0.15


def test_smoothing_fit_needs_enough_samples(kinetic_partition):
    f = multiring_field()
    with pytest.raises(ContractViolationError):
        smoothing_exponent_fit(f, 1.0, 0.0, kinetic_partition, [0.1, 0.2])
