import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

import oracles
from levysmooth import kernels, sde, semigroup as sg
from levysmooth.errors import DomainError, NotApplicableError, UnsupportedError
from levysmooth.subordinators import DriftOnly, Gamma, Stable, Status


def noise(sub, d=1, perturbation=None):
    return sg.NoiseSpec(kernels.HeatKernelSpec(d), sub, perturbation)


BM = noise(DriftOnly(1.0))
STABLE = noise(Stable(0.75))
VG = noise(Gamma(1.0, 1.0))
BOX = sg.indicator_box([-1], [1])


class CubicDrift:
    """``b(x) = c x**3`` declared as linear growth; used to provoke blow-up."""

    growth = sde.Growth.LINEAR
    ell = 1

    def __init__(self, c):
        self.c = c

    def __call__(self, t, x):
        with np.errstate(over="ignore", invalid="ignore"):
            return self.c * x**3

    def to_dict(self):
        return {"kind": "cubic", "c": self.c}


# ---------------------------------------------------------------- specs


def test_spec_dict_round_trip():
    spec = sde.SdeSpec(STABLE, sde.TanhDrift(0.5), sde.SinDiffusion(1.0, 0.1))
    again = sde.sde_from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict()


def test_perturbation_support():
    sde.SdeSpec(noise(Gamma(1, 1), perturbation=sg.ZeroPerturbation()))
    sde.SdeSpec(noise(Gamma(1, 1), perturbation=sg.FractionalGaussian(0.5)))
    with pytest.raises(UnsupportedError):
        sde.SdeSpec(noise(Gamma(1, 1), perturbation=sg.FractionalGaussian(0.3)))
    with pytest.raises(UnsupportedError):
        sde.SdeSpec(noise(Gamma(1, 1), perturbation=sg.ZeroPerturbation()), diffusion=sde.ConstantDiffusion(1.0))


def test_coefficient_validation():
    assert sde.validate_coefficients(sde.SdeSpec(BM, sde.LinearDrift(-1.0))) == []
    assert sde.validate_coefficients(sde.SdeSpec(STABLE, sde.TanhDrift(0.5), sde.SinDiffusion())) == []
    assert sde.validate_coefficients(sde.SdeSpec(BM, CubicDrift(1.0)))


def test_sin_diffusion_needs_ellipticity():
    with pytest.raises(DomainError):
        sde.SinDiffusion(0.1, 0.2)
    assert sde.SinDiffusion(1.0, 0.1).ellipticity == pytest.approx(0.9)


def test_time_grid_contains_snapshots():
    grid = sde.time_grid(1.0, 0.3, [0.45, 1.0, 0.0])
    assert grid[0] == 0.0 and grid[-1] == 1.0
    assert 0.45 in grid
    assert np.all(np.diff(grid) > 0)
    with pytest.raises(DomainError):
        sde.time_grid(1.0, 2.0)
    with pytest.raises(DomainError):
        sde.time_grid(1.0, 0.1, [1.5])


# ---------------------------------------------------------------- additive scheme


def test_pure_wiener_variance():
    x = sde.euler_additive(sde.SdeSpec(BM), 0.3, 2.0, 0.1, rng_seed=1, n=100_000)[:, 0]
    assert x.mean() == pytest.approx(0.3, abs=3 * math.sqrt(2.0 / 1e5))
    assert x.var() == pytest.approx(2.0, abs=3 * 2.0 * math.sqrt(2 / 1e5))


def test_ou_mean_matches_euler_recursion():
    # the Euler scheme for b(x) = -x has mean x (1 - h)**(t / h) exactly
    h, t, x0, n = 0.02, 1.0, 1.5, 50_000
    x = sde.euler_additive(sde.SdeSpec(BM, sde.LinearDrift(-1.0)), x0, t, h, rng_seed=2, n=n)[:, 0]
    expected = x0 * (1 - h) ** round(t / h)
    assert abs(x.mean() - expected) <= 3 * x.std() / math.sqrt(n)
    assert expected == pytest.approx(oracles.ou_mean(x0, t), abs=0.02)


def test_stable_char_function():
    t, n = 0.8, 200_000
    x = sde.euler_additive(sde.SdeSpec(STABLE), 0.0, t, t / 4, rng_seed=3, n=n)[:, 0]
    c = np.cos(x)
    expected = oracles.char_function_cos(lambda lam: lam**0.75, t, 1.0)
    assert abs(c.mean() - expected) <= 3 * c.std() / math.sqrt(n)


def test_brownian_perturbation_adds_variance():
    spec = sde.SdeSpec(noise(DriftOnly(1.0), perturbation=sg.FractionalGaussian(0.5, 2.0)))
    x = sde.euler_additive(spec, 0.0, 1.0, 0.25, rng_seed=4, n=100_000)[:, 0]
    assert x.var() == pytest.approx(5.0, abs=3 * 5.0 * math.sqrt(2 / 1e5))


def test_euler_wrappers_check_diffusion():
    with pytest.raises(DomainError):
        sde.euler_additive(sde.SdeSpec(BM, diffusion=sde.ConstantDiffusion(1.0)), 0.0, 1.0, 0.5)
    with pytest.raises(DomainError):
        sde.euler_multiplicative(sde.SdeSpec(BM), 0.0, 1.0, 0.5)


# ---------------------------------------------------------------- multiplicative scheme


def test_unit_diffusion_reduces_to_additive():
    add = sde.euler_additive(sde.SdeSpec(STABLE, sde.TanhDrift(0.5)), 0.2, 1.0, 0.05, rng_seed=5, n=100_000)[:, 0]
    mul = sde.euler_multiplicative(
        sde.SdeSpec(STABLE, sde.TanhDrift(0.5), sde.ConstantDiffusion(1.0)), 0.2, 1.0, 0.05, rng_seed=6, n=100_000
    )[:, 0]
    assert stats.ks_2samp(add, mul).pvalue > 0.01


def test_multiplicative_symmetry():
    # sigma = 1 + 0.1 sin is even about pi/2; the stable law has no third
    # moment, so symmetry is tested with odd bounded statistics
    x0, n = math.pi / 2, 100_000
    spec = sde.SdeSpec(STABLE, diffusion=sde.SinDiffusion(1.0, 0.1))
    z = sde.euler_multiplicative(spec, x0, 1.0, 0.05, rng_seed=7, n=n)[:, 0] - x0
    for g in (np.tanh(z), np.sign(z), np.arctan(3 * z)):
        assert abs(g.mean()) <= 3 * g.std() / math.sqrt(n)


def test_constant_diffusion_scales_the_noise():
    c, n = 2.5, 100_000
    mul = sde.euler_multiplicative(sde.SdeSpec(STABLE, diffusion=sde.ConstantDiffusion(c)), 0.0, 1.0, 0.1, rng_seed=8, n=n)
    add = sde.euler_additive(sde.SdeSpec(STABLE), 0.0, 1.0, 0.1, rng_seed=9, n=n)
    assert stats.ks_2samp(mul[:, 0], c * add[:, 0]).pvalue > 0.01


# ---------------------------------------------------------------- Monte Carlo semigroup


def test_mc_constant_function():
    est = sde.mc_semigroup(sde.SdeSpec(VG, sde.TanhDrift(0.5)), 1.0, sg.constant(), 0.0, 5000, 0.1)
    assert est.value == 1.0 and est.stderr == 0.0 and est.reliable


def test_mc_driftless_matches_quadrature():
    for sub, f, x in [(Gamma(1.0, 1.0), BOX, 0.4), (Stable(0.75), sg.halfspace(), 0.3)]:
        n1 = noise(sub)
        est = sde.mc_semigroup(sde.SdeSpec(n1), 1.0, f, x, 200_000, 0.5, seed=10)
        assert abs(est.value - sg.apply_subordinated(n1, 1.0, f, x).value) <= 4 * est.stderr


def test_mc_vectorised_over_points():
    xs = np.array([-1.0, 0.0, 2.0])
    est = sde.mc_semigroup(sde.SdeSpec(BM, sde.LinearDrift(-1.0)), 0.5, sg.linear([1.0]), xs, 20_000, 0.05, seed=1)
    assert est.value.shape == (3,)
    assert np.all(np.abs(est.value - xs * 0.95**10) <= 4 * est.stderr)


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([BOX, sg.cosine([2.0]), sg.halfspace()]), st.floats(-3, 3), st.integers(0, 1000))
def test_mc_respects_sup_bound(f, x, seed):
    est = sde.mc_semigroup(sde.SdeSpec(STABLE, sde.TanhDrift(0.5)), 0.5, f, x, 2000, 0.1, seed=seed)
    assert abs(est.value) <= f.bounded_sup + 3 * est.stderr


def test_mc_flags_blow_up():
    est = sde.mc_semigroup(sde.SdeSpec(STABLE, CubicDrift(50.0)), 1.0, BOX, 3.0, 2000, 0.1, seed=0)
    assert est.diverged > 20
    assert not est.reliable
    assert np.isfinite(est.value)


def test_paths_are_reproducible_across_threads():
    spec = sde.SdeSpec(VG, sde.TanhDrift(0.5))
    n = 2 * 32768 + 100
    a = sde.path_batch(spec, 0.1, 0.5, 0.1, n, seed=3, threads=1)
    b = sde.path_batch(spec, 0.1, 0.5, 0.1, n, seed=3, threads=3)
    assert a.to_bytes() == b.to_bytes()
    c = sde.path_batch(spec, 0.1, 0.5, 0.1, n, seed=4, threads=1)
    assert a.to_bytes() != c.to_bytes()


# ---------------------------------------------------------------- path batches


def test_path_batch_binary_round_trip():
    batch = sde.path_batch(sde.SdeSpec(noise(Gamma(1, 1), d=2)), [0.0, 1.0], 0.5, 0.25, 1000, seed=1)
    data = batch.to_bytes()
    assert data[:4] == b"LSMB"
    assert np.array_equal(sde.PathBatch.values_from_bytes(data), batch.values)
    with pytest.raises(ValueError, match="magic"):
        sde.PathBatch.values_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError, match="truncated"):
        sde.PathBatch.values_from_bytes(data[:-8])


def test_path_batch_csv():
    batch = sde.path_batch(sde.SdeSpec(noise(Gamma(1, 1), d=2)), [0.0, 1.0], 0.5, 0.25, 3, seed=1)
    lines = batch.to_csv().splitlines()
    assert lines[0] == "x0,x1" and len(lines) == 4
    assert float(lines[1].split(",")[1]) == batch.values[0, 1]


# ---------------------------------------------------------------- strong Feller profile


def test_profile_gaussian_baseline_shrinks():
    prof = sde.strong_feller_profile(sde.SdeSpec(BM, sde.LinearDrift(-1.0)), 1.0, sg.halfspace(), 0.0,
                                     [0.4, 0.2, 0.1, 0.05], 50_000, 0.05, seed=1)
    assert prof.monotone
    assert prof.shrink_factor >= 2
    assert prof.verdict == "consistent with strong Feller"


def test_profile_zero_offset_is_exactly_zero():
    prof = sde.strong_feller_profile(sde.SdeSpec(STABLE, sde.LinearDrift(-1.0)), 1.0, sg.halfspace(), 0.0,
                                     [0.2, 0.0], 5000, 0.1, seed=2)
    assert prof.diffs[-1] == 0.0 and prof.stderr[-1] == 0.0


def test_profile_without_smoothing_shows_no_continuity():
    # a deterministic flow (T = 0 is excluded, so use a tiny clock) keeps the jump of f
    spec = sde.SdeSpec(noise(DriftOnly(1e-8)), sde.ZeroDrift())
    prof = sde.strong_feller_profile(spec, 1.0, sg.halfspace(), -0.001, [0.4, 0.2, 0.1, 0.05], 5000, 0.5, seed=3)
    assert prof.verdict == "no evidence of continuity"


def test_profile_rejects_increasing_offsets():
    with pytest.raises(DomainError):
        sde.strong_feller_profile(sde.SdeSpec(BM), 1.0, BOX, 0.0, [0.1, 0.2], 100, 0.5)


def test_profile_csv():
    prof = sde.strong_feller_profile(sde.SdeSpec(BM), 1.0, BOX, 0.0, [0.2, 0.1], 1000, 0.5)
    lines = prof.to_csv().splitlines()
    assert lines[0] == "offset,diff,stderr" and len(lines) == 3


# ---------------------------------------------------------------- Duhamel residual

SMALL = sde.DuhamelLevel(20_000, 8, 0.05)


def test_drift_integrability():
    assert not sde.drift_integrability(sde.SdeSpec(VG, sde.TanhDrift(0.5)))
    assert sde.drift_integrability(sde.SdeSpec(STABLE, sde.TanhDrift(0.5)))
    assert sde.drift_integrability(sde.SdeSpec(STABLE, sde.LinearDrift(-1.0)))
    assert not sde.drift_integrability(sde.SdeSpec(noise(Stable(0.4)), sde.TanhDrift(0.5)))
    assert sde.drift_integrability(sde.SdeSpec(BM, sde.LinearDrift(-1.0)))


def test_duhamel_zero_drift():
    spec = sde.SdeSpec(noise(Gamma(2.0, 1.0)))
    res = sde.duhamel_residual(spec, 1.0, BOX, [-1.5, 0.0, 0.5], SMALL, seed=1)
    assert res.residual == 0.0
    py = np.asarray(sg.apply_subordinated(spec.noise, 1.0, BOX, [-1.5, 0.0, 0.5]).value)
    se = np.sqrt(py * (1 - py) / SMALL.n)
    assert np.all(np.abs(res.lhs_plain - py) <= 4 * se)


def test_duhamel_small_time_limit():
    spec = sde.SdeSpec(noise(Gamma(2.0, 1.0)), sde.TanhDrift(0.5))
    xs = np.array([-2.0, -0.5, 0.5, 2.0])
    res = sde.duhamel_residual(spec, 0.01, BOX, xs, sde.DuhamelLevel(20_000, 8, 0.005), seed=2)
    assert np.all(np.abs(res.lhs - BOX(xs)) < 0.05)
    assert np.all(np.abs(res.rhs - BOX(xs)) < 0.05)


def test_duhamel_stable_agrees():
    spec = sde.SdeSpec(STABLE, sde.TanhDrift(0.5))
    res = sde.duhamel_residual(spec, 1.0, BOX, np.linspace(-2, 2, 5), sde.DuhamelLevel(100_000, 32, 0.02), seed=3)
    assert res.eq11_holds
    assert res.residual < 1e-2


def test_duhamel_strict_refuses_gamma_clock():
    with pytest.raises(NotApplicableError):
        sde.duhamel_residual(sde.SdeSpec(VG, sde.TanhDrift(0.5)), 1.0, BOX, [0.0], SMALL, strict=True)


def test_duhamel_preconditions():
    with pytest.raises(UnsupportedError):
        sde.duhamel_residual(sde.SdeSpec(noise(Gamma(1, 1), d=2)), 1.0, sg.indicator_box([-1, -1], [1, 1]), [[0, 0]], SMALL)
    with pytest.raises(DomainError):
        sde.duhamel_residual(sde.SdeSpec(VG), 1.0, sg.halfspace(), [0.0], SMALL)


def test_duhamel_csv_columns():
    res = sde.duhamel_residual(sde.SdeSpec(VG, sde.TanhDrift(0.5)), 1.0, BOX, [0.0, 1.0], SMALL)
    lines = res.to_csv().splitlines()
    assert lines[0] == "x,lhs,lhs_stderr,lhs_plain,rhs,residual"
    assert len(lines) == 3


# ---------------------------------------------------------------- densities


def test_kde_binned_matches_direct():
    rng = np.random.default_rng(0)
    s = rng.standard_normal(20_000)
    y = np.linspace(-4, 4, 81)
    assert np.allclose(sde._kde_binned(s, y, 0.1), sde._kde_direct(s, y, 0.1), rtol=1e-3, atol=1e-6)


def test_empirical_density_gaussian():
    y = np.linspace(-5, 5, 101)
    q = sde.empirical_density(sde.SdeSpec(BM), 1.0, 0.5, 10**6, 0.05, y, 1.0, seed=1)
    exact = kernels.heat_kernel(kernels.HeatKernelSpec(1), 1.0, (y - 0.5)[:, None])
    assert np.max(np.abs(q - exact)) < 2e-2
    assert 0.97 <= integrate.trapezoid(q, y) <= 1.0


def test_empirical_density_vg():
    y = np.linspace(-6, 6, 121)
    q = sde.empirical_density(sde.SdeSpec(VG), 2.0, 0.0, 10**6, 0.05, y, 2.0, seed=2)
    ref = np.asarray(sg.subordinated_density(VG, 2.0, y).value)
    assert np.max(np.abs(q - ref)) < 2e-2
    assert 0.97 <= integrate.trapezoid(q, y) <= 1.0


def test_empirical_density_preconditions():
    with pytest.raises(DomainError):
        sde.empirical_density(sde.SdeSpec(BM), 1.0, 0.0, 100, 0.1, [0.0], 0.5)
    with pytest.raises(DomainError):
        sde.empirical_density(sde.SdeSpec(BM), 1.0, 0.0, 10**4, 0.0, [0.0], 0.5)


def test_local_lp_gaussian_baseline():
    res = sde.local_lp_criterion(sde.SdeSpec(BM), 1.0, 0.0, 0.5, 10.0, 2.0, 50_000, 0.05, 1.0, seed=1)
    assert res.status is Status.FINITE
    assert res.sup == pytest.approx(oracles.gaussian_lp_integral(1.0, 2.0), rel=0.05)
    assert sde.gaussian_lp_integral(1.0, 2.0) == pytest.approx(oracles.gaussian_lp_integral(1.0, 2.0), rel=1e-12)


def test_local_lp_rejects_p_one():
    with pytest.raises(DomainError):
        sde.local_lp_criterion(sde.SdeSpec(BM), 1.0, 0.0, 0.5, 10.0, 1.0, 10_000, 0.05, 1.0)
