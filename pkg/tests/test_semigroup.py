import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from levysmooth import kernels, semigroup as sg
from levysmooth.errors import DomainError
from levysmooth.subordinators import DriftOnly, Gamma, Method, Stable, Status, moment


def noise(sub, d=1, perturbation=None):
    return sg.NoiseSpec(kernels.HeatKernelSpec(d), sub, perturbation)


VG = noise(Gamma(1.0, 1.0))
BM = noise(DriftOnly(1.0))
BOX = sg.indicator_box([-1], [1])


# ---------------------------------------------------------------- test functions


@pytest.mark.parametrize(
    "f",
    [BOX, sg.halfspace(), sg.constant(2.0), sg.gaussian_bump([0.5], 0.7), sg.cosine([1.3]),
     sg.indicator_box([-1, 0], [1, 2])],
    ids=lambda f: f.name,
)
def test_declared_metadata_consistent(f):
    assert sg.check_declared_metadata(f) == []


def test_metadata_check_catches_bad_support():
    bad = sg.TestFunction(lambda y: np.ones(np.shape(y)[:-1]), 1, support_radius=1.0, bounded_sup=1.0)
    assert "nonzero outside declared support" in sg.check_declared_metadata(bad)


@pytest.mark.parametrize(
    "obj",
    [{"kind": "box", "lo": [-1.0], "hi": [1.0]}, {"kind": "bump", "center": [0.0], "width": 2.0},
     {"kind": "cosine", "omega": [1.0, 2.0]}, {"kind": "linear", "coef": [1.0]},
     {"kind": "constant", "value": 3.0, "dimension": 1}, {"kind": "halfspace", "dimension": 1, "axis": 0}],
)
def test_test_function_dict_round_trip(obj):
    f = sg.test_function_from_dict(obj)
    assert sg.test_function_from_dict(f.to_dict()).to_dict() == f.to_dict()


def test_box_lp_norms():
    assert BOX.norm(2) == pytest.approx(math.sqrt(2))
    assert BOX.norm(math.inf) == 1.0
    assert BOX.weighted(1.0, math.inf) == 1.0


# ---------------------------------------------------------------- Gaussian semigroup


@pytest.mark.parametrize("t", [0.1, 1.0, 3.0])
@pytest.mark.parametrize("x", [-2.0, 0.0, 1.5])
def test_gaussian_trivial_cases(t, x):
    assert sg.apply_gaussian(BM, t, sg.constant(), x) == pytest.approx(1.0)
    assert sg.apply_gaussian(BM, t, sg.linear([1.0]), x) == pytest.approx(x)


@pytest.mark.parametrize("t", [0.05, 1.0, 7.0])
def test_gaussian_halfspace_symmetry(t):
    assert sg.apply_gaussian(BM, t, sg.halfspace(), 0.0) == pytest.approx(0.5, abs=1e-12)
    assert sg.apply_gaussian(BM, t, sg.halfspace(), 0.0, method="quadrature") == pytest.approx(0.5, abs=1e-8)


@pytest.mark.parametrize("f", [BOX, sg.gaussian_bump([0.3], 0.5), sg.cosine([2.0])], ids=lambda f: f.name)
def test_gaussian_closed_form_matches_quadrature(f):
    for x in (-1.2, 0.0, 0.9):
        assert sg.apply_gaussian(BM, 0.7, f, x) == pytest.approx(
            sg.apply_gaussian(BM, 0.7, f, x, method="quadrature"), abs=1e-8)


def test_gaussian_box_against_oracle():
    for x in (-1.5, 0.2, 2.0):
        assert sg.apply_gaussian(BM, 0.4, BOX, x) == pytest.approx(oracles.box_smoothing(0.4, x, -1, 1), abs=1e-12)


def test_gaussian_rejects_unbounded_without_norm():
    bad = sg.TestFunction(lambda y: np.exp(np.sum(y, axis=-1) ** 2), 1)
    with pytest.raises(DomainError):
        sg.apply_gaussian(BM, 1.0, bad, 0.0)


# ---------------------------------------------------------------- subordinated density


def test_density_drift_only_is_heat_kernel():
    y = np.linspace(-3, 3, 7)
    ev = sg.subordinated_density(BM, 1.3, y)
    assert np.allclose(ev.value, kernels.heat_kernel(kernels.HeatKernelSpec(1), 1.3, y[:, None]), rtol=1e-10)


@pytest.mark.parametrize("y", [0.0, 0.7, 2.5])
def test_density_vg_matches_bessel_oracle(y):
    ev = sg.subordinated_density(VG, 2.0, y)
    assert ev.status is Status.FINITE
    assert ev.value == pytest.approx(oracles.vg_density(1, 1, 2.0, y), rel=1e-7)


def test_density_vg_divergent_at_origin_in_two_dimensions():
    ev = sg.subordinated_density(noise(Gamma(1.0, 1.0), d=2), 0.8, [0.0, 0.0])
    assert ev.status is Status.DIVERGENT


# ---------------------------------------------------------------- subordinated semigroup


def test_subordinated_constant():
    for sub in (Gamma(1, 1), Stable(0.6), DriftOnly(2.0)):
        assert sg.apply_subordinated(noise(sub), 0.8, sg.constant(), 0.3).value == pytest.approx(1.0, abs=1e-9)


def test_subordinated_stable_symmetry():
    est = sg.apply_subordinated(noise(Stable(0.75)), 1.0, sg.halfspace(), 0.0)
    assert est.value == pytest.approx(0.5, abs=1e-9)


def test_subordinated_vg_cosine_char_function():
    expected = oracles.char_function_cos(lambda lam: math.log(1 + lam), 1.0, 1.0)
    assert expected == pytest.approx(2 / 3, rel=1e-12)
    assert sg.apply_subordinated(VG, 1.0, sg.cosine([1.0]), 0.0).value == pytest.approx(expected, rel=1e-7)


@pytest.mark.parametrize("x", [-1.5, 0.0, 0.5, 1.2])
def test_subordinated_box_against_mixture_oracle(x):
    got = sg.apply_subordinated(noise(Gamma(2.0, 1.5)), 0.7, BOX, x).value
    assert got == pytest.approx(oracles.vg_box_smoothing(2.0, 1.5, 0.7, x, -1, 1), abs=1e-7)


# ---------------------------------------------------------------- derivatives


@pytest.mark.parametrize("k", [1, 2, 3])
def test_derivative_of_constant_is_zero(k):
    ev = sg.subordinated_derivative(VG, 1.0, sg.constant(), 0.4, k)
    assert np.all(np.asarray(ev.value) == 0)


def test_derivative_drift_only_box_symmetry():
    ev = sg.subordinated_derivative(BM, 1.0, BOX, 0.0, 1)
    assert float(np.squeeze(ev.value)) == pytest.approx(0.0, abs=1e-15)
    x = 0.3
    ev = sg.subordinated_derivative(BM, 1.0, BOX, x, 1)
    p = lambda u: math.exp(-u * u / 2) / math.sqrt(2 * math.pi)
    assert float(np.squeeze(ev.value)) == pytest.approx(p(x + 1) - p(x - 1), rel=1e-12)


def _fd(noise_, t, f, x, h=1e-4):
    up = sg.apply_subordinated(noise_, t, f, x + h).value
    dn = sg.apply_subordinated(noise_, t, f, x - h).value
    return (up - dn) / (2 * h)


def test_derivative_vg_box_matches_finite_difference():
    ev = sg.subordinated_derivative(VG, 1.5, BOX, 0.5, 1)
    assert ev.status is Status.FINITE
    assert float(np.squeeze(ev.value)) == pytest.approx(_fd(VG, 1.5, BOX, 0.5), abs=1e-4)


def test_derivative_divergent_below_threshold():
    ev = sg.subordinated_derivative(VG, 0.4, BOX, 0.5, 1)
    assert ev.status is Status.DIVERGENT


def test_derivative_alpha_selects_partial():
    n2 = noise(Gamma(2.0, 1.0), d=2)
    f = sg.indicator_box([-1, -0.5], [1, 1.5])
    x = np.array([0.3, -0.2])
    full = sg.subordinated_derivative(n2, 1.0, f, x, 2).value
    part = sg.subordinated_derivative(n2, 1.0, f, x, 2, alpha=(1, 1)).value
    assert part == pytest.approx(full[0, 1], rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(
    st.sampled_from([(Gamma(1.0, 1.0), 1.2), (Gamma(3.0, 2.0), 0.5), (Stable(0.7), 0.6), (DriftOnly(1.0), 0.9)]),
    st.floats(-2.5, 2.5),
)
def test_derivative_matches_difference_where_finite(case, x):
    sub, t = case
    n1 = noise(sub)
    ev = sg.subordinated_derivative(n1, t, BOX, x, 1)
    assert ev.status is Status.FINITE
    fd = _fd(n1, t, BOX, x)
    d1 = float(np.squeeze(ev.value))
    assert abs(d1 - fd) <= 1e-4 * max(abs(fd), 1e-2)


# ---------------------------------------------------------------- bounds


def test_bound_rhs_sup_norm_case():
    for t in (0.7, 1.5):
        r = sg.bound_rhs(VG, t, 1, 0.0, math.inf, math.inf, 1.0)
        m = moment(Gamma(1, 1), t, -0.5, Method.QUADRATURE).value
        assert r.value == pytest.approx(2 * m, rel=1e-12)


def test_bound_rhs_lp_strong_feller_case():
    r = sg.bound_rhs(VG, 2.0, 0, 0.0, 2.0, 2.0, 1.0)
    m = moment(Gamma(1, 1), 2.0, -0.25, Method.QUADRATURE).value
    assert r.value == pytest.approx(2 * m, rel=1e-12)


def test_bound_rhs_divergent_below_threshold():
    assert sg.bound_rhs(VG, 0.4, 1, 0.0, math.inf, math.inf, 1.0).status is Status.DIVERGENT


def test_smoothing_bound_drift_only_stable_ratio():
    rep = sg.verify_smoothing_bound(BM, BOX, np.linspace(0.1, 2, 6), k=1)
    assert rep.verdict is sg.Verdict.BOUND_HOLDS
    assert rep.ratio_spread < 2.0


def test_smoothing_bound_vg_holds_above_threshold():
    rep = sg.verify_smoothing_bound(VG, BOX, [0.6, 1.0, 1.5, 2.0], k=1)
    assert rep.verdict is sg.Verdict.BOUND_HOLDS
    assert all(s is Status.FINITE for s in rep.statuses)


def test_smoothing_bound_vg_reports_divergent_entry():
    rep = sg.verify_smoothing_bound(VG, BOX, [0.3, 1.0], k=1)
    assert rep.verdict is sg.Verdict.DIVERGENT
    assert rep.statuses[0] is Status.DIVERGENT and rep.statuses[1] is Status.FINITE
    rows = rep.to_csv().splitlines()
    assert rows[0] == "t,k,l,p,q,estimate,rhs,ratio,status,verdict"
    assert rows[1].endswith("divergent,divergent")
    assert rows[2].endswith("finite,bound_holds")


def test_smoothing_report_json_round_trip():
    import json

    rep = sg.verify_smoothing_bound(VG, BOX, [0.3, 1.0], k=1)
    obj = json.loads(rep.to_json())
    assert obj["verdict"] == "divergent"
    assert obj["fitted_constant"] == pytest.approx(rep.fitted_constant)


# ---------------------------------------------------------------- Hoelder and L_p norms


def test_holder_constant_is_zero():
    assert sg.holder_seminorm_estimate(VG, 1.0, sg.constant(), 0.5).seminorm == pytest.approx(0.0, abs=1e-12)


def test_holder_vg_ratio_stable():
    f = sg.indicator_box([0], [1])
    ratios = [sg.holder_seminorm_estimate(VG, t, f, 0.5).ratio for t in (0.6, 1.0, 1.5, 2.0)]
    assert all(np.isfinite(ratios))
    assert max(ratios) / min(ratios) <= sg.RATIO_SPREAD_LIMIT


def test_holder_seminorm_against_oracle_pair():
    f = sg.indicator_box([0], [1])
    x1, x2 = np.array([[0.2]]), np.array([[0.45]])
    est = sg.holder_seminorm_estimate(VG, 1.0, f, 0.5, pairs=(x1, x2))
    diff = oracles.vg_box_smoothing(1, 1, 1.0, 0.2, 0, 1) - oracles.vg_box_smoothing(1, 1, 1.0, 0.45, 0, 1)
    assert est.seminorm == pytest.approx(abs(diff) / 0.25**0.5, rel=1e-6)


def test_holder_divergent_below_threshold():
    assert sg.holder_seminorm_estimate(VG, 0.3, BOX, 0.9).status is Status.DIVERGENT


def test_holder_rejects_beta_out_of_range():
    with pytest.raises(DomainError):
        sg.holder_seminorm_estimate(VG, 1.0, BOX, 1.0)


@pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
def test_lp_order_zero_contracts(p):
    est = sg.lp_derivative_norm(VG, 1.0, BOX, (0,), p)
    assert est.norm <= BOX.norm(p) * (1 + 1e-3)


def test_lp_first_derivative_ratio_stable():
    ratios = [sg.lp_derivative_norm(VG, t, BOX, (1,), 2.0).ratio for t in (0.6, 1.0, 1.5, 2.0)]
    assert max(ratios) / min(ratios) <= sg.RATIO_SPREAD_LIMIT


@pytest.mark.parametrize("order", [0, 1])
def test_lp_bump_drift_only_against_oracle(order):
    f = sg.gaussian_bump([0.0], 0.8)
    est = sg.lp_derivative_norm(BM, 0.5, f, (order,), 2.0, radius=12.0, n_grid=4001)
    assert est.norm == pytest.approx(oracles.bump_smoothed_lp_norm(0.8, 0.5, 2, order), abs=1e-6)


# ---------------------------------------------------------------- invariants


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from([Gamma(1.0, 1.0), Gamma(0.5, 2.0), Stable(0.5), Stable(0.9), DriftOnly(0.5)]),
    st.sampled_from([BOX, sg.cosine([2.0]), sg.gaussian_bump([1.0], 0.3), sg.halfspace()]),
    st.floats(0.05, 3.0),
    st.floats(-4.0, 4.0),
)
def test_markov_contraction(sub, f, t, x):
    val = sg.apply_subordinated(noise(sub), t, f, x).value
    assert abs(val) <= f.bounded_sup * (1 + 1e-9)


def test_semigroup_property_drift_only():
    f = sg.gaussian_bump([0.4], 0.6)
    s, t = 0.3, 0.5
    inner = sg.TestFunction(lambda y: np.asarray(sg.apply_gaussian(BM, s, f, y)), 1, bounded_sup=1.0)
    for x in (-1.0, 0.0, 0.4, 1.7):
        two_step = sg.gaussian_quadrature(BM, t, inner, x)
        assert two_step == pytest.approx(sg.apply_gaussian(BM, s + t, f, x), abs=1e-6)


def test_zero_perturbation_matches_plain():
    xs = np.linspace(-2, 2, 9)
    plain = sg.subordinated_derivative(VG, 1.2, BOX, xs, 1).value
    zero = sg.subordinated_derivative(noise(Gamma(1.0, 1.0), perturbation=sg.ZeroPerturbation()), 1.2, BOX, xs, 1).value
    assert np.max(np.abs(plain - zero)) <= 1e-10


@pytest.mark.parametrize(
    "sub,f,t,x",
    [(Gamma(1.0, 1.0), BOX, 1.0, 0.3), (Stable(0.75), sg.halfspace(), 0.5, 0.4),
     (Gamma(2.0, 0.5), sg.cosine([1.5]), 0.8, -0.6), (Stable(0.4), sg.gaussian_bump([0.0], 0.5), 1.0, 1.0)],
)
def test_quadrature_and_monte_carlo_agree(sub, f, t, x):
    n1 = noise(sub)
    quad = sg.apply_subordinated(n1, t, f, x).value
    mc = sg.apply_subordinated(n1, t, f, x, mode="montecarlo", n=10**6, seed=4)
    assert abs(quad - mc.value) <= 4 * mc.stderr


def test_fbm_perturbation_does_not_increase_sup_norm():
    fbm = noise(Gamma(1.0, 1.0), perturbation=sg.FractionalGaussian(0.3))
    grid = np.linspace(-4, 4, 41)[:, None]
    dense = np.linspace(-8, 8, 4001)[:, None]
    for t in (0.8, 1.5):
        perturbed = sg.sup_weighted_derivative(fbm, t, BOX, 1, 0.0, grid).value
        plain = sg.sup_weighted_derivative(VG, t, BOX, 1, 0.0, dense).value
        assert perturbed <= plain * (1 + 1e-6)
