"""Acceptance criteria, each at its stated tolerance, with one pass/fail line apiece.

Seeds are fixed so every run reproduces the same numbers.
"""

import json
import math
import time

import numpy as np

import oracles
from acceptance_log import record
from cli_cases import FAST
from levysmooth import cli, kernels, sde, semigroup as sg, spectral as sp
from levysmooth.subordinators import DriftOnly, Gamma, Method, MomentQuery, Stable, Status
from levysmooth.subordinators import negative_moment_mc, negative_moment_quadrature


def noise(sub, d=1):
    return sg.NoiseSpec(kernels.HeatKernelSpec(d), sub)


VG = noise(Gamma(1.0, 1.0))
BOX = sg.indicator_box([-1], [1])


def test_01_negative_moment_formula():
    start = time.perf_counter()
    spec = Gamma(1.0, 1.0)
    quad = negative_moment_quadrature(spec, MomentQuery(1.0, 0.5, Method.QUADRATURE))
    mc = negative_moment_mc(spec, MomentQuery(1.0, 0.5, Method.MONTE_CARLO), 10**6, seed=0, threads=1)
    elapsed = time.perf_counter() - start
    exact = math.sqrt(math.pi)
    rel = abs(quad.value - exact) / exact
    z = abs(mc.value - exact) / mc.stderr
    ok = rel < 1e-6 and z <= 3 and elapsed < 10
    assert record(1, ok, f"quadrature rel err {rel:.2e} (< 1e-6), MC |z| {z:.2f} (<= 3), {elapsed:.1f} s (< 10 s)")


def test_02_vg_smoothing_threshold():
    start = time.perf_counter()
    times = [0.3, 0.4, 0.45, 0.55, 0.6, 1.0]
    correct = 0
    for t in times:
        expected = Status.FINITE if t > 0.5 else Status.DIVERGENT
        deriv = sg.subordinated_derivative(VG, t, BOX, 0.5, 1).status
        rhs = sg.bound_rhs(VG, t, 1, 0.0, math.inf, math.inf, 1.0).status
        correct += deriv is expected and rhs is expected
    elapsed = time.perf_counter() - start
    ok = correct == len(times) and elapsed < 30
    assert record(2, ok, f"{correct}/{len(times)} classifications correct, {elapsed:.1f} s (< 30 s)")


def test_03_vg_density_singularity():
    expected = {0.3: Status.DIVERGENT, 0.5: Status.DIVERGENT, 0.6: Status.FINITE, 1.0: Status.FINITE}
    correct = sum(sg.subordinated_density(VG, t, 0.0).status is s for t, s in expected.items())
    assert record(3, correct == 4, f"{correct}/4 origin statuses correct")


def test_04_hermite_derivative_exactness():
    start = time.perf_counter()
    rng = np.random.default_rng(20240604)
    worst, good = 0.0, 0
    for _ in range(200):
        d = int(rng.integers(1, 4))
        order = int(rng.integers(0, 4))
        alpha = np.bincount(rng.integers(0, d, size=order), minlength=d)
        t = float(rng.uniform(0.1, 2.0))
        x = rng.standard_normal(d)
        x *= rng.uniform(0, 4) / np.linalg.norm(x)
        got = kernels.heat_kernel_partial(kernels.HeatKernelSpec(d), t, x, tuple(int(a) for a in alpha))
        ref = oracles.heat_kernel_partial_fd(t, x.tolist(), [int(a) for a in alpha])
        err = abs(got - ref) / abs(ref) if ref != 0 else abs(got)
        worst = max(worst, err)
        good += err < 1e-5
    elapsed = time.perf_counter() - start
    ok = good == 200 and elapsed < 60
    assert record(4, ok, f"{good}/200 cases within 1e-5 (worst {worst:.1e}), {elapsed:.1f} s (< 60 s)")


def test_05_bound_stability():
    start = time.perf_counter()
    times = np.linspace(0.6, 2.0, 8)
    spreads = {}
    for ell in (0.0, 1.0):
        rep = sg.verify_smoothing_bound(VG, BOX, times, k=1, ell=ell)
        spreads[ell] = rep.ratio_spread if rep.verdict is not sg.Verdict.DIVERGENT else math.inf
    elapsed = time.perf_counter() - start
    ok = all(s <= 10 for s in spreads.values()) and elapsed < 300
    assert record(5, ok, f"max/min ratio l=0: {spreads[0.0]:.3f}, l=1: {spreads[1.0]:.3f} (<= 10), {elapsed:.1f} s (< 300 s)")


def test_06_spectral_ratio():
    parts, ok = [], True
    for a, b in [(1.0, 1.0), (2.0, 0.5)]:
        psi = sp.char_exponent_from_noise(noise(Gamma(a, b)))
        res = sp.hw_ratio(psi)
        thr = sp.hw_threshold_time(psi, 1)
        good = (res.radii[-1] == 1e6 and res.classification is sp.HWClass.FINITE
                and abs(res.limit - 2 * a) <= 0.01 * 2 * a and thr == 1 / (2 * a))
        ok &= good
        parts.append(f"VG({a:g},{b:g}) limit {res.limit:.4f} vs {2 * a:g} (ratio at 1e6 {res.ratios[-1]:.4f}), threshold {thr:g}")
    stable = sp.hw_ratio(sp.char_exponent_from_noise(noise(Stable(0.75)))).classification
    ok &= stable is sp.HWClass.DIVERGES
    parts.append(f"stable {stable.value}")
    assert record(6, ok, "; ".join(parts))


def test_07_density_cross_oracle():
    y = np.linspace(-5, 5, 41)
    psi = sp.char_exponent_from_noise(VG, "probabilistic")
    four = sp.fourier_density(psi, 2.0, y, 1).value
    mix = sg.subordinated_density(VG, 2.0, y).value
    gap = float(np.max(np.abs(four - mix)))
    assert record(7, gap < 1e-4, f"sup |fourier - mixture| {gap:.2e} (< 1e-4)")


def test_08_sde_weak_correctness():
    x0, t, n = 1.0, 1.0, 100_000
    est = sde.mc_semigroup(sde.SdeSpec(noise(DriftOnly(1.0)), sde.LinearDrift(-1.0)), t, sg.linear([1.0]), x0, n, 1e-3, seed=0, threads=1)
    z_ou = (est.value - oracles.ou_mean(x0, t)) / est.stderr
    f = sg.indicator_box([-1], [1])
    vg = noise(Gamma(2.0, 1.0))
    mc = sde.mc_semigroup(sde.SdeSpec(vg), t, f, 0.3, n, 0.05, seed=1, threads=1)
    z_red = (mc.value - sg.apply_subordinated(vg, t, f, 0.3).value) / mc.stderr
    ok = abs(z_ou) <= 3 and abs(z_red) <= 4
    assert record(8, ok, f"OU mean z {z_ou:+.2f} (|z| <= 3), driftless reduction z {z_red:+.2f} (|z| <= 4)")


def test_09_strong_feller_profile():
    start = time.perf_counter()
    spec = sde.SdeSpec(noise(Stable(0.75)), sde.LinearDrift(-1.0))
    prof = sde.strong_feller_profile(spec, 1.0, sg.halfspace(), 0.0, [0.4, 0.2, 0.1, 0.05, 0.025], 200_000, 0.01, seed=0, threads=1)
    elapsed = time.perf_counter() - start
    ok = prof.monotone and prof.shrink_factor >= 2 and elapsed < 300
    diffs = ", ".join(f"{v:.4f}" for v in prof.diffs)
    assert record(9, ok, f"diffs [{diffs}], monotone {prof.monotone}, shrink {prof.shrink_factor:.1f} (>= 2), "
                         f"Spearman {prof.spearman:.2f} (p {prof.spearman_pvalue:.1e}), {elapsed:.1f} s (< 300 s)")


def test_10_duhamel_residual():
    spec = sde.SdeSpec(noise(Gamma(2.0, 1.0)), sde.TanhDrift(0.5))
    xs = np.linspace(-2, 2, 9)
    residuals = [sde.duhamel_residual(spec, 1.0, BOX, xs, lv, seed=0, threads=1).residual for lv in sde.DEFAULT_LADDER]
    ok = residuals[0] > residuals[1] > residuals[2] and residuals[2] < 5e-3
    text = " > ".join(f"{r:.2e}" for r in residuals)
    assert record(10, ok, f"residuals {text}, final < 5e-3")


def test_11_local_lp_criterion():
    gauss = sde.local_lp_criterion(sde.SdeSpec(noise(DriftOnly(1.0))), 1.0, 0.0, 0.5, 10.0, 2.0, 100_000, 0.05, 1.0, seed=0, threads=1)
    exact = oracles.gaussian_lp_integral(1.0, 2.0)
    rel = abs(gauss.sup - exact) / exact
    spec = sde.SdeSpec(noise(Stable(0.75)), sde.TanhDrift(0.5), sde.SinDiffusion(1.0, 0.1))
    mult = sde.local_lp_criterion(spec, 1.0, 0.0, 0.5, 10.0, 2.0, 100_000, 0.05, 0.01, seed=0, threads=1)
    ok = rel <= 0.05 and 0.8 <= mult.ratio <= 1.2
    assert record(11, ok, f"Gaussian sup {gauss.sup:.5f} vs {exact:.5f} (rel {rel:.3f} <= 0.05), "
                          f"multiplicative stable doubling ratio {mult.ratio:.3f} (in [0.8, 1.2])")


def test_12_cli_determinism(tmp_path):
    mismatched = []
    for command, cfg in sorted(FAST.items()):
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(cfg))
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{command}-{rep}"
            cli.main([command, "--config", str(path), "--out", str(out), "--threads", "2"])
            outs.append(out)
        names = sorted(p.name for p in outs[0].iterdir() if p.suffix == ".csv")
        if not names or any((outs[0] / n).read_bytes() != (outs[1] / n).read_bytes() for n in names):
            mismatched.append(command)
    ok = not mismatched
    assert record(12, ok, f"{len(FAST) - len(mismatched)}/{len(FAST)} commands byte-identical on rerun")
