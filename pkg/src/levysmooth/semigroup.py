"""Transition semigroups of ``W``, ``Y = W o T`` and ``Z = Y + xi``.

``P^W_s f`` is the Gaussian convolution ``f * p_s``.  Subordination mixes it
over the law ``nu_t`` of ``T_t``:

    P^Y_t f(x) = int_0^inf P^W_s f(x) nu_t(ds),

and derivatives pass under the integral.  An independent perturbation
``xi`` shifts the argument, ``P^Z_t f(x) = E P^Y_t f(x + xi_t)``.

Test functions carry the metadata needed by the smoothing bounds (sup norm,
support, weighted and L_p norms) and, for the standard families, a closed
form for ``D^k P^W_s f``.  A generic quadrature route is kept for
cross-checking and for functions without a closed form.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate, special
from scipy.stats import qmc

from . import kernels, streams
from .errors import DomainError, UnsupportedError
from .kernels import HeatKernelSpec, MultiIndex
from .subordinators import (
    DriftOnly,
    Method,
    MomentResult,
    Status,
    Subordinator,
    mixture_expectation,
    moment,
    subordinator_from_dict,
)


class Estimate(NamedTuple):
    value: float | np.ndarray
    stderr: float | np.ndarray


# ----------------------------------------------------------------------------
# Test functions
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TestFunction:
    """A function ``f: R^d -> R`` with the metadata used by the bounds.

    ``evaluator`` maps arrays of shape ``(..., d)`` to ``(...)``.
    ``lp_norm(p)`` returns ``||f||_{L_p}`` and ``weighted_norm(l, q)``
    returns ``|| |y|**l f ||_{L_q}`` (``q = inf`` gives the weighted sup).
    ``gaussian_smoothing(s, x, k)`` returns ``D^k P^W_s f(x)`` with shape
    ``x.shape[:-1] + (d,)*k``.  ``smooth`` marks functions whose smoothed
    derivatives stay bounded as ``s -> 0``.
    """

    __test__ = False  # keep pytest from collecting the class

    evaluator: Callable[[np.ndarray], np.ndarray]
    dimension: int
    name: str = "custom"
    bounded_sup: float | None = None
    support_radius: float | None = None
    lp_norm: Callable[[float], float] | None = None
    weighted_norm: Callable[[float, float], float] | None = None
    growth_degree: int | None = None
    critical_points: tuple = ()
    smooth: bool = False
    gaussian_smoothing: Callable[[float, np.ndarray, int], np.ndarray] | None = None
    params: dict = field(default_factory=dict)

    def __call__(self, y):
        return self.evaluator(np.asarray(y, dtype=float))

    def norm(self, p: float) -> float:
        if p == math.inf and self.bounded_sup is not None:
            return self.bounded_sup
        if self.lp_norm is None:
            raise DomainError(f"{self.name}: no declared L_{p} norm")
        return float(self.lp_norm(p))

    def weighted(self, ell: float, q: float) -> float:
        if ell == 0:
            return self.norm(q)
        if self.weighted_norm is None:
            raise DomainError(f"{self.name}: no declared weighted norm for l={ell}, q={q}")
        return float(self.weighted_norm(ell, q))

    def to_dict(self) -> dict:
        return {"kind": self.name, **self.params}


def _p_derivative_1d(s: float, u: np.ndarray, m: int) -> np.ndarray:
    """``d^m/du^m p_s(u)`` in one dimension, zero at infinite ``u``."""
    finite = np.isfinite(u)
    uu = np.where(finite, u, 0.0)
    rs = math.sqrt(s)
    val = (-1) ** m * s ** (-m / 2) * kernels.hermite_eval(m, uu / rs) * np.exp(-uu * uu / (2 * s)) / math.sqrt(2 * math.pi * s)
    return np.where(finite, val, 0.0)


def _interval_derivatives(s: float, x: np.ndarray, lo: float, hi: float, kmax: int) -> list[np.ndarray]:
    """``d^m/dx^m P^W_s 1_[lo, hi](x)`` for ``m = 0..kmax`` in one dimension."""
    rs = math.sqrt(s)
    a = (lo - x) / rs
    b = (hi - x) / rs
    # pick the tail that avoids cancellation
    mass = np.where(a < 0, special.ndtr(b) - special.ndtr(a), special.ndtr(-a) - special.ndtr(-b))
    out = [mass]
    for m in range(1, kmax + 1):
        out.append(_p_derivative_1d(s, x - lo, m - 1) - _p_derivative_1d(s, x - hi, m - 1))
    return out


def _tensor_from_coordinate_derivatives(per_coord: list[list[np.ndarray]], k: int, shape, d: int) -> np.ndarray:
    out = np.empty(shape + (d,) * k)
    for idx in product(range(d), repeat=k):
        counts = np.bincount(np.array(idx, dtype=int), minlength=d) if k else np.zeros(d, dtype=int)
        val = np.ones(shape)
        for j in range(d):
            val = val * per_coord[j][counts[j]]
        out[(Ellipsis,) + idx] = val
    return out


def indicator_box(lo: Sequence[float], hi: Sequence[float]) -> TestFunction:
    """Indicator of the box ``prod_i [lo_i, hi_i]`` (infinite ends allowed)."""
    lo = np.asarray(lo, dtype=float).reshape(-1)
    hi = np.asarray(hi, dtype=float).reshape(-1)
    if lo.shape != hi.shape or np.any(lo >= hi):
        raise DomainError("box needs lo < hi coordinatewise")
    d = lo.size
    bounded = bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))

    def f(y):
        y = np.asarray(y, dtype=float)
        if d == 1 and (y.ndim == 0 or y.shape[-1] != 1):
            y = y[..., None]
        return np.all((y >= lo) & (y <= hi), axis=-1).astype(float)

    def smoothing(s, x, k):
        per = [_interval_derivatives(s, x[..., j], lo[j], hi[j], k) for j in range(d)]
        return _tensor_from_coordinate_derivatives(per, k, x.shape[:-1], d)

    far = np.maximum(np.abs(lo), np.abs(hi))
    corner = float(np.linalg.norm(far)) if bounded else None

    def lp(p):
        if not bounded:
            if p == math.inf:
                return 1.0
            raise DomainError("unbounded box is not in L_p for finite p")
        vol = float(np.prod(hi - lo))
        return 1.0 if p == math.inf else vol ** (1 / p)

    def weighted(ell, q):
        if not bounded:
            raise DomainError("unbounded box has no finite weighted norm")
        if q == math.inf:
            return corner**ell
        if d == 1:
            e = ell * q + 1
            lo1, hi1 = lo[0], hi[0]
            if lo1 >= 0 or hi1 <= 0:
                val = abs(abs(hi1) ** e - abs(lo1) ** e) / e
            else:
                val = (abs(hi1) ** e + abs(lo1) ** e) / e
            return val ** (1 / q)
        raise DomainError("finite-q weighted norm declared only for d = 1 boxes")

    crit = []
    if d == 1:
        crit = [np.array([v]) for v in (lo[0], hi[0]) if np.isfinite(v)]
    elif bounded:
        crit = [np.array(c) for c in product(*zip(lo, hi))]
    if bounded:
        name, params = "box", {"lo": lo.tolist(), "hi": hi.tolist()}
    else:
        name, params = "box", {"lo": [v if np.isfinite(v) else None for v in lo.tolist()],
                               "hi": [v if np.isfinite(v) else None for v in hi.tolist()]}
    return TestFunction(
        f, d, name, 1.0, corner, lp, weighted, None, tuple(crit), False, smoothing, params
    )


def halfspace(dimension: int = 1, axis: int = 0) -> TestFunction:
    """Indicator of ``{y : y_axis >= 0}``."""
    lo = np.full(dimension, -np.inf)
    hi = np.full(dimension, np.inf)
    lo[axis] = 0.0
    tf = indicator_box(lo, hi)
    return TestFunction(
        tf.evaluator, dimension, "halfspace", 1.0, None, tf.lp_norm, None, None,
        (np.zeros(dimension),), False, tf.gaussian_smoothing, {"dimension": dimension, "axis": axis},
    )


def constant(value: float = 1.0, dimension: int = 1) -> TestFunction:
    c = float(value)

    def f(y):
        y = np.asarray(y, dtype=float)
        shape = y.shape if dimension == 1 and (y.ndim == 0 or y.shape[-1] != 1) else y.shape[:-1]
        return np.full(shape, c)

    def smoothing(s, x, k):
        shape = x.shape[:-1] + (dimension,) * k
        return np.full(shape, c) if k == 0 else np.zeros(shape)

    def lp(p):
        if p == math.inf or c == 0:
            return abs(c)
        raise DomainError("a nonzero constant is not in L_p for finite p")

    return TestFunction(f, dimension, "constant", abs(c), None, lp, None, None, (), True, smoothing,
                        {"value": c, "dimension": dimension})


def gaussian_bump(center: Sequence[float], width: float = 1.0) -> TestFunction:
    """``f(y) = exp(-|y - center|**2 / (2 width**2))``."""
    c = np.asarray(center, dtype=float).reshape(-1)
    d = c.size
    w2 = float(width) ** 2
    if not w2 > 0:
        raise DomainError("width must be > 0")
    scale = (2 * math.pi * w2) ** (d / 2)
    spec = HeatKernelSpec(d)

    def f(y):
        y = np.asarray(y, dtype=float)
        if d == 1 and (y.ndim == 0 or y.shape[-1] != 1):
            y = y[..., None]
        return np.exp(-np.sum((y - c) ** 2, axis=-1) / (2 * w2))

    def smoothing(s, x, k):
        return scale * kernels.derivative_tensor(spec, w2 + s, x - c, k)

    def lp(p):
        if p == math.inf:
            return 1.0
        return (2 * math.pi * w2 / p) ** (d / (2 * p))

    def weighted(ell, q):
        if q == math.inf:
            if np.any(c != 0):
                raise DomainError("weighted sup declared only for centred bumps")
            return (ell * w2) ** (ell / 2) * math.exp(-ell / 2) if ell > 0 else 1.0
        raise DomainError("finite-q weighted norm not declared for bumps")

    return TestFunction(f, d, "bump", 1.0, None, lp, weighted, None, (c,), True, smoothing,
                        {"center": c.tolist(), "width": float(width)})


def cosine(omega: Sequence[float]) -> TestFunction:
    """``f(y) = cos(<omega, y>)``."""
    om = np.asarray(omega, dtype=float).reshape(-1)
    d = om.size

    def f(y):
        y = np.asarray(y, dtype=float)
        if d == 1 and (y.ndim == 0 or y.shape[-1] != 1):
            y = y[..., None]
        return np.cos(y @ om)

    def smoothing(s, x, k):
        damp = math.exp(-s * float(om @ om) / 2)
        val = damp * np.cos(x @ om + k * math.pi / 2)
        out = val
        for _ in range(k):
            out = out[..., None] * om
        return out

    def lp(p):
        if p == math.inf:
            return 1.0
        raise DomainError("cosine is not in L_p for finite p")

    return TestFunction(f, d, "cosine", 1.0, None, lp, None, None, (), True, smoothing,
                        {"omega": om.tolist()})


def linear(coef: Sequence[float]) -> TestFunction:
    """``f(y) = <coef, y>``: unbounded with Gaussian-integrable growth."""
    v = np.asarray(coef, dtype=float).reshape(-1)
    d = v.size

    def f(y):
        y = np.asarray(y, dtype=float)
        if d == 1 and (y.ndim == 0 or y.shape[-1] != 1):
            y = y[..., None]
        return y @ v

    def smoothing(s, x, k):
        shape = x.shape[:-1]
        if k == 0:
            return x @ v
        if k == 1:
            return np.broadcast_to(v, shape + (d,)).copy()
        return np.zeros(shape + (d,) * k)

    return TestFunction(f, d, "linear", None, None, None, None, 1, (), True, smoothing,
                        {"coef": v.tolist()})


_FACTORIES = {
    "box": lambda o: indicator_box(
        [(-np.inf if v is None else v) for v in o["lo"]], [(np.inf if v is None else v) for v in o["hi"]]
    ),
    "halfspace": lambda o: halfspace(int(o.get("dimension", 1)), int(o.get("axis", 0))),
    "constant": lambda o: constant(float(o.get("value", 1.0)), int(o.get("dimension", 1))),
    "bump": lambda o: gaussian_bump(o["center"], float(o.get("width", 1.0))),
    "cosine": lambda o: cosine(o["omega"]),
    "linear": lambda o: linear(o["coef"]),
}


def test_function_from_dict(obj: dict) -> TestFunction:
    kind = obj.get("kind")
    if kind not in _FACTORIES:
        raise ValueError(f"unknown test function kind {kind!r}; expected one of {sorted(_FACTORIES)}")
    return _FACTORIES[kind](obj)


test_function_from_dict.__test__ = False


def check_declared_metadata(f: TestFunction, radius: float = 8.0, n: int = 4096, seed: int = 0) -> list[str]:
    """Spot-check declared support and sup bounds on random points.

    Returns a list of human-readable violations (empty when consistent).
    """
    rng = streams.generator(seed, 99)
    y = rng.uniform(-radius, radius, size=(n, f.dimension))
    vals = np.asarray(f(y), dtype=float)
    problems = []
    if f.bounded_sup is not None and np.max(np.abs(vals)) > f.bounded_sup * (1 + 1e-12):
        problems.append("sup bound exceeded")
    if f.support_radius is not None:
        outside = np.linalg.norm(y, axis=-1) > f.support_radius * (1 + 1e-9)
        if np.any(vals[outside] != 0):
            problems.append("nonzero outside declared support")
    return problems


# ----------------------------------------------------------------------------
# Noise specification and perturbations
# ----------------------------------------------------------------------------


class ZeroPerturbation:
    """``xi = 0``; useful as the degenerate case of a perturbed noise."""

    kind = "zero"

    def sample(self, t: float, rng: np.random.Generator, n: int, d: int) -> np.ndarray:
        return np.zeros((n, d))

    def to_dict(self):
        return {"kind": "zero"}


@dataclass(frozen=True)
class FractionalGaussian:
    """Fractional Brownian motion sampled at a single time: ``N(0, scale**2 t**(2H) I)``."""

    hurst: float
    scale: float = 1.0
    kind = "fbm"

    def __post_init__(self):
        if not 0 < self.hurst < 1:
            raise DomainError("Hurst index must lie in (0, 1)")
        if not self.scale >= 0:
            raise DomainError("scale must be >= 0")

    def sample(self, t: float, rng: np.random.Generator, n: int, d: int) -> np.ndarray:
        return self.scale * t**self.hurst * rng.standard_normal((n, d))

    def to_dict(self):
        return {"kind": "fbm", "hurst": self.hurst, "scale": self.scale}


def perturbation_from_dict(obj: dict | None):
    if obj is None:
        return None
    kind = obj.get("kind")
    if kind == "zero":
        return ZeroPerturbation()
    if kind == "fbm":
        return FractionalGaussian(float(obj["hurst"]), float(obj.get("scale", 1.0)))
    raise ValueError(f"unknown perturbation kind {kind!r}")


@dataclass(frozen=True)
class NoiseSpec:
    """``Z = W o T + xi`` with ``W`` of covariance ``heat.covariance``."""

    heat: HeatKernelSpec
    subordinator: Subordinator
    perturbation: object | None = None
    perturbation_draws: int = 64

    @property
    def dimension(self) -> int:
        return self.heat.dimension

    def to_dict(self) -> dict:
        out = {"dimension": self.dimension, "subordinator": self.subordinator.to_dict()}
        if not self.heat.isotropic:
            out["covariance"] = np.asarray(self.heat.covariance).tolist()
        if self.perturbation is not None:
            out["perturbation"] = self.perturbation.to_dict()
        return out


def noise_from_dict(obj: dict) -> NoiseSpec:
    d = int(obj["dimension"])
    heat = HeatKernelSpec(d, obj.get("covariance"))
    return NoiseSpec(heat, subordinator_from_dict(obj["subordinator"]), perturbation_from_dict(obj.get("perturbation")))


def _points(noise: NoiseSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = noise.dimension
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != d:
        raise DomainError(f"points must have trailing dimension {d}")
    return x


def _out(v):
    v = np.asarray(v)
    return float(v) if v.ndim == 0 else v


def _shifts(noise: NoiseSpec, t: float, seed: int) -> np.ndarray:
    """Sampled perturbation values ``xi_t``; a single zero shift without one."""
    if noise.perturbation is None:
        return np.zeros((1, noise.dimension))
    rng = streams.generator(seed, streams.STREAM_PERTURBATION)
    return noise.perturbation.sample(t, rng, noise.perturbation_draws, noise.dimension)


def _check_time(t: float):
    if not t > 0:
        raise DomainError(f"t must be > 0, got {t}")


# ----------------------------------------------------------------------------
# Gaussian semigroup
# ----------------------------------------------------------------------------


def _quadrature_box(noise: NoiseSpec, t: float, f: TestFunction, x: np.ndarray):
    sig = math.sqrt(t * float(np.max(np.linalg.eigvalsh(noise.heat.covariance if noise.heat.covariance is not None else np.eye(noise.dimension)))))
    lo, hi = x - 10 * sig, x + 10 * sig
    if f.support_radius is not None:
        lo = np.maximum(lo, -f.support_radius)
        hi = np.minimum(hi, f.support_radius)
    return lo, hi


def gaussian_quadrature(noise: NoiseSpec, t: float, f: TestFunction, x, alpha=None):
    """``d^alpha P^W_t f(x)`` by adaptive quadrature of ``f`` against the kernel.

    Integrates over a ``10 sigma`` box around ``x`` (intersected with the
    support of ``f`` when declared).  Slow but independent of the closed
    forms, which it is used to cross-check.
    """
    _check_time(t)
    xs = _points(noise, x)
    d = noise.dimension
    if alpha is not None:
        alpha = alpha if isinstance(alpha, MultiIndex) else MultiIndex(tuple(alpha))
        h = np.eye(d)[[j for j, a in enumerate(alpha.entries) for _ in range(a)]]
        n = alpha.order
    scale = f.bounded_sup if f.bounded_sup is not None else 1.0
    flat = xs.reshape(-1, d)
    out = np.empty(len(flat))
    crit = [np.asarray(c, dtype=float).reshape(-1) for c in f.critical_points]
    for i, xi in enumerate(flat):
        lo, hi = _quadrature_box(noise, t, f, xi)
        if np.any(lo >= hi):
            out[i] = 0.0
            continue

        def kern(y):
            u = xi - y
            if alpha is None or n == 0:
                return kernels.heat_kernel(noise.heat, t, u)
            return kernels.frechet_derivative(noise.heat, t, u, n, h)

        if d == 1:
            pts = [float(c[0]) for c in crit if lo[0] < c[0] < hi[0]] + [float(xi[0])]
            val, _ = integrate.quad(
                lambda y: float(f(np.array([y]))) * kern(np.array([y])),
                lo[0], hi[0], points=pts, epsabs=1e-10 * scale, epsrel=1e-10, limit=400,
            )
        else:
            val, _ = integrate.nquad(
                lambda *y: float(f(np.array(y))) * kern(np.array(y)),
                [[lo[j], hi[j]] for j in range(d)],
                opts={"epsabs": 1e-8 * scale, "epsrel": 1e-8, "limit": 100},
            )
        out[i] = val
    return _out(out.reshape(xs.shape[:-1]))


def apply_gaussian(noise: NoiseSpec, t: float, f: TestFunction, x, method: str = "auto"):
    """``P^W_t f(x) = int f(y) p_t(x - y) dy``.

    ``method="auto"`` uses the closed form of ``f`` when available (and
    ``Q = I``), otherwise quadrature.  Unbounded ``f`` must declare a
    polynomial growth degree.
    """
    _check_time(t)
    if f.bounded_sup is None and f.lp_norm is None and f.growth_degree is None:
        raise DomainError("unbounded test function without declared integrability")
    xs = _points(noise, x)
    if method not in ("auto", "closed", "quadrature"):
        raise ValueError("method must be auto, closed or quadrature")
    closed_ok = f.gaussian_smoothing is not None and noise.heat.isotropic
    if method == "closed" and not closed_ok:
        raise UnsupportedError("no closed form for this function / covariance")
    if method != "quadrature" and closed_ok:
        return _out(f.gaussian_smoothing(t, xs, 0))
    return gaussian_quadrature(noise, t, f, xs)


def _smoothed(noise: NoiseSpec, s: float, f: TestFunction, xs: np.ndarray, k: int) -> np.ndarray:
    if f.gaussian_smoothing is None or not noise.heat.isotropic:
        raise UnsupportedError(
            "mixture evaluation needs a closed-form Gaussian smoothing with Q = I; use mode='montecarlo'"
        )
    return np.asarray(f.gaussian_smoothing(s, xs, k), dtype=float)


# ----------------------------------------------------------------------------
# Subordinated semigroup
# ----------------------------------------------------------------------------


def _singular_scales(f: TestFunction, xs: np.ndarray) -> list[float]:
    scales = []
    for c in f.critical_points:
        c = np.asarray(c, dtype=float).reshape(-1)
        dist2 = np.sum((xs.reshape(-1, xs.shape[-1]) - c) ** 2, axis=-1)
        scales.extend(float(v) for v in np.unique(dist2) if v > 0)
    return sorted(set(scales))[:40]


def _mixture_of_smoothing(noise, t, f, xs, k, seed):
    shifts = _shifts(noise, t, seed)
    pts = xs[None, ...] + shifts.reshape((shifts.shape[0],) + (1,) * (xs.ndim - 1) + (xs.shape[-1],))
    tail = (noise.dimension,) * k

    def g(s):
        return _smoothed(noise, s, f, pts, k).reshape(-1)

    kappa = 0.0 if f.smooth else k / 2
    total = mixture_expectation(noise.subordinator, t, g, singular_power=kappa, scales=_singular_scales(f, pts))
    total = total.reshape(pts.shape[:-1] + tail)
    return total.mean(axis=0)


def _mc_chunk(noise: NoiseSpec, t: float, m: int, seed: int, chunk: int):
    """Draws ``(T_t, Q^{1/2} G, xi_t)`` for one chunk, each from its own substream."""
    rt = streams.generator(seed, streams.STREAM_SUBORDINATOR, chunk)
    rg = streams.generator(seed, streams.STREAM_GAUSSIAN, chunk)
    tt = noise.subordinator.sample(t, rt, m)
    g = rg.standard_normal((m, noise.dimension)) @ noise.heat.cholesky.T
    if noise.perturbation is None:
        xi = np.zeros((m, noise.dimension))
    else:
        xi = noise.perturbation.sample(t, streams.generator(seed, streams.STREAM_PERTURBATION, chunk), m, noise.dimension)
    return tt, g, xi


def _mc_expectation(noise, t, f, xs, n, seed, threads=None):
    flat = xs.reshape(-1, noise.dimension)
    sizes = streams.chunk_sizes(n)

    def work(i):
        tt, g, xi = _mc_chunk(noise, t, sizes[i], seed, i)
        y = flat[None, :, :] + (np.sqrt(tt)[:, None] * g + xi)[:, None, :]
        vals = np.asarray(f(y), dtype=float)
        mu = vals.mean(axis=0)
        return sizes[i], mu, np.square(vals - mu).sum(axis=0)

    parts = streams.parallel_map(work, list(range(len(sizes))), threads)
    count, mean, m2 = parts[0]
    for nb, mb, m2b in parts[1:]:
        tot = count + nb
        delta = mb - mean
        mean = mean + delta * (nb / tot)
        m2 = m2 + m2b + delta**2 * (count * nb / tot)
        count = tot
    se = np.sqrt(m2 / (count - 1) / count) if count > 1 else np.full_like(mean, np.inf)
    shape = xs.shape[:-1]
    return Estimate(_out(mean.reshape(shape)), _out(se.reshape(shape)))


def apply_subordinated(
    noise: NoiseSpec,
    t: float,
    f: TestFunction,
    x,
    mode: str = "quadrature",
    n: int = 10**6,
    seed: int = 0,
    threads: int | None = None,
) -> Estimate:
    """``P^Y_t f(x)`` (or ``P^Z_t f(x)`` with a perturbation).

    ``mode="quadrature"`` mixes the closed-form Gaussian smoothing over the
    law of ``T_t``; ``mode="montecarlo"`` averages ``f(x + sqrt(T_t) Q^{1/2} G + xi_t)``.
    """
    _check_time(t)
    xs = _points(noise, x)
    if mode == "montecarlo":
        return _mc_expectation(noise, t, f, xs, n, seed, threads)
    if mode != "quadrature":
        raise ValueError("mode must be 'quadrature' or 'montecarlo'")
    if f.bounded_sup is None and f.growth_degree is None and f.lp_norm is None:
        raise DomainError("unbounded test function without declared integrability")
    val = _mixture_of_smoothing(noise, t, f, xs, 0, seed)
    return Estimate(_out(val), _out(np.zeros_like(val)))


@dataclass(frozen=True)
class Evaluation:
    """A (possibly vector) value with a finiteness status."""

    value: float | np.ndarray
    status: Status

    @property
    def finite(self) -> bool:
        return self.status is Status.FINITE


def subordinated_density(noise: NoiseSpec, t: float, y) -> Evaluation:
    """``p^Y_t(y) = int p_s(y) nu_t(ds)``; divergent at ``y = 0`` when ``E T_t^{-d/2} = inf``.

    Divergent points hold ``inf`` and the status is ``DIVERGENT`` if any
    requested point diverges.
    """
    _check_time(t)
    ys = _points(noise, y)
    d = noise.dimension
    spec = noise.subordinator
    at_zero = np.all(ys == 0, axis=-1)
    status = Status.FINITE
    if np.any(at_zero) and noise.perturbation is None:
        m = moment(spec, t, -d / 2, Method.QUADRATURE)
        if m.status is not Status.FINITE:
            status = m.status
    shifts = _shifts(noise, t, 0)
    pts = ys[None] - shifts.reshape((shifts.shape[0],) + (1,) * (ys.ndim - 1) + (d,))
    if isinstance(spec, DriftOnly):
        vals = kernels.heat_kernel(noise.heat, spec.c * t, pts)
    else:
        safe = np.where((status is not Status.FINITE) & at_zero[None, ..., None], 1.0, pts)
        flat = safe.reshape(-1, d)
        r2 = np.sum(flat**2, axis=-1)
        kappa = d / 2 if np.any(r2 == 0) else 0.0
        vals = mixture_expectation(
            spec, t, lambda s: np.atleast_1d(kernels.heat_kernel(noise.heat, s, flat)),
            singular_power=kappa, scales=sorted({float(v) / d for v in r2 if v > 0})[:40],
        ).reshape(pts.shape[:-1])
    vals = np.asarray(vals, dtype=float).mean(axis=0)
    if status is not Status.FINITE:
        vals = np.where(at_zero, np.inf, vals)
    return Evaluation(_out(vals), status)


def derivative_moment_status(noise: NoiseSpec, t: float, f: TestFunction, k: int) -> Status:
    """Finiteness of ``E T_t^{-k/2}`` when it controls ``D^k P^Y_t f``."""
    if k == 0 or f.smooth:
        return Status.FINITE
    return moment(noise.subordinator, t, -k / 2, Method.QUADRATURE).status


def subordinated_derivative(noise: NoiseSpec, t: float, f: TestFunction, x, k: int, alpha=None, seed: int = 0) -> Evaluation:
    """``D^k P^Y_t f(x)`` as a tensor of shape ``x.shape[:-1] + (d,)*k``.

    With ``alpha`` the single partial ``d^alpha P^Y_t f(x)`` is returned
    instead (``k`` is then ``|alpha|``).  For non-smooth ``f`` the status is
    ``DIVERGENT`` when ``E T_t^{-k/2} = inf``; smooth ``f`` (constants,
    bumps, cosines) always give finite derivatives.
    """
    _check_time(t)
    if alpha is not None:
        alpha = alpha if isinstance(alpha, MultiIndex) else MultiIndex(tuple(alpha))
        k = alpha.order
    if k < 0:
        raise DomainError("k must be >= 0")
    xs = _points(noise, x)
    status = derivative_moment_status(noise, t, f, k)
    d = noise.dimension
    if status is not Status.FINITE:
        shape = xs.shape[:-1] + (() if alpha is not None else (d,) * k)
        return Evaluation(_out(np.full(shape, np.nan)), status)
    tensor = _mixture_of_smoothing(noise, t, f, xs, k, seed)
    if alpha is not None:
        idx = tuple(j for j, a in enumerate(alpha.entries) for _ in range(a))
        tensor = tensor[(Ellipsis,) + idx]
    return Evaluation(_out(tensor), Status.FINITE)


def derivative_norms(tensors: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Operator norms of a stack of ``k``-tensors (lower bounds for ``k >= 3``)."""
    tensors = np.asarray(tensors, dtype=float)
    d = tensors.shape[-1] if k else 1
    flat = tensors.reshape((-1,) + (d,) * k)
    rng = streams.generator(seed, 7)
    return np.array([kernels.tensor_operator_norm(T, rng)[0] for T in flat]).reshape(tensors.shape[: tensors.ndim - k])


# ----------------------------------------------------------------------------
# Bounds and reports
# ----------------------------------------------------------------------------


def _exp_inv(p: float) -> float:
    return 0.0 if p == math.inf else 1.0 / p


def bound_rhs(noise: NoiseSpec, t: float, k: int, ell: float, p: float, q: float, f_norm: float) -> MomentResult:
    """``||f||_{p,q,l} (E T_t^{(l-k)/2 - d/(2p)} + E T_t^{-k/2 - d/(2q)})``.

    ``f_norm`` is ``||f||_{L_p} + || |y|^l f ||_{L_q}``.  Either moment being
    infinite makes the result divergent.
    """
    _check_time(t)
    d = noise.dimension
    r1 = (ell - k) / 2 - d * _exp_inv(p) / 2
    r2 = -k / 2 - d * _exp_inv(q) / 2
    m1 = moment(noise.subordinator, t, r1, Method.QUADRATURE)
    m2 = moment(noise.subordinator, t, r2, Method.QUADRATURE)
    for m in (m1, m2):
        if m.status is not Status.FINITE:
            return MomentResult(math.inf if m.status is Status.DIVERGENT else math.nan, 0.0, m.status, Method.QUADRATURE)
    return MomentResult(f_norm * (m1.value + m2.value), 0.0, Status.FINITE, Method.QUADRATURE)


def pq_norm(f: TestFunction, ell: float, p: float, q: float) -> float:
    """``||f||_{L_p} + || |y|^l f ||_{L_q}``."""
    return f.norm(p) + f.weighted(ell, q)


def sobol_grid(dimension: int, radius: float, m: int = 6) -> np.ndarray:
    """``2**m`` unscrambled Sobol points in ``[-radius, radius]^d``."""
    pts = qmc.Sobol(dimension, scramble=False).random_base2(m)
    return (2 * pts - 1) * radius


def default_x_grid(f: TestFunction, m: int = 6) -> np.ndarray:
    d = f.dimension
    radius = 5.0 + (f.support_radius or 0.0)
    grid = sobol_grid(d, radius, m)
    crit = [np.asarray(c, dtype=float).reshape(-1) for c in f.critical_points]
    if crit:
        grid = np.vstack([grid] + [c[None, :] for c in crit])
    return grid


class Verdict(str, Enum):
    BOUND_HOLDS = "bound_holds"
    BOUND_VIOLATED = "bound_violated"
    DIVERGENT = "divergent"


RATIO_SPREAD_LIMIT = 10.0


@dataclass
class SmoothingReport:
    times: np.ndarray
    k: int
    ell: float
    p: float
    q: float
    estimates: np.ndarray
    rhs: np.ndarray
    ratios: np.ndarray
    statuses: list
    fitted_constant: float
    ratio_spread: float
    verdict: Verdict
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        return smoothing_report_csv([self])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_dict(self) -> dict:
        return {
            "times": [float(v) for v in self.times],
            "k": self.k,
            "l": self.ell,
            "p": _fmt_exp(self.p),
            "q": _fmt_exp(self.q),
            "estimates": [_json_float(v) for v in self.estimates],
            "rhs": [_json_float(v) for v in self.rhs],
            "ratios": [_json_float(v) for v in self.ratios],
            "statuses": [s.value for s in self.statuses],
            "fitted_constant": _json_float(self.fitted_constant),
            "ratio_spread": _json_float(self.ratio_spread),
            "verdict": self.verdict.value,
            "meta": self.meta,
        }


def _fmt_exp(p):
    return "inf" if p == math.inf else p


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def smoothing_report_csv(reports: Sequence[SmoothingReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "k", "l", "p", "q", "estimate", "rhs", "ratio", "status", "verdict"])
    for r in reports:
        held = r.ratio_spread <= RATIO_SPREAD_LIMIT
        for i, t in enumerate(r.times):
            if r.statuses[i] is not Status.FINITE:
                row_verdict = Verdict.DIVERGENT
            else:
                row_verdict = Verdict.BOUND_HOLDS if held else Verdict.BOUND_VIOLATED
            w.writerow([repr(float(t)), r.k, repr(float(r.ell)), _fmt_exp(r.p), _fmt_exp(r.q),
                        repr(float(r.estimates[i])), repr(float(r.rhs[i])), repr(float(r.ratios[i])),
                        r.statuses[i].value, row_verdict.value])
    return buf.getvalue()


def sup_weighted_derivative(noise: NoiseSpec, t: float, f: TestFunction, k: int, ell: float, x_grid: np.ndarray, seed: int = 0) -> Evaluation:
    """``max_x |x|^l ||D^k P_t f(x)||`` over the grid."""
    ev = subordinated_derivative(noise, t, f, x_grid, k, seed=seed)
    if not ev.finite:
        return Evaluation(math.nan, ev.status)
    norms = derivative_norms(ev.value, k, seed)
    weights = np.linalg.norm(x_grid, axis=-1) ** ell if ell else 1.0
    return Evaluation(float(np.max(weights * norms)), Status.FINITE)


def verify_smoothing_bound(
    noise: NoiseSpec,
    f: TestFunction,
    times: Sequence[float],
    k: int,
    ell: float = 0.0,
    p: float = math.inf,
    q: float = math.inf,
    x_grid=None,
    seed: int = 0,
) -> SmoothingReport:
    """Compare ``sup_x |x|^l ||D^k P_t f(x)||`` with the moment bound over ``times``.

    The fitted constant is the largest ratio estimate / RHS.  The bound is
    declared to hold when the ratios stay within a factor
    ``RATIO_SPREAD_LIMIT`` of each other across the finite grid times.
    """
    times = np.asarray(times, dtype=float)
    xg = default_x_grid(f) if x_grid is None else _points(noise, x_grid).reshape(-1, noise.dimension)
    fn = pq_norm(f, ell, p, q)
    est, rhs, ratios, statuses = [], [], [], []
    for t in times:
        r = bound_rhs(noise, float(t), k, ell, p, q, fn)
        if r.status is not Status.FINITE:
            est.append(math.nan)
            rhs.append(r.value)
            ratios.append(math.nan)
            statuses.append(r.status)
            continue
        e = sup_weighted_derivative(noise, float(t), f, k, ell, xg, seed)
        est.append(e.value)
        rhs.append(r.value)
        ratios.append(e.value / r.value if r.value > 0 else math.nan)
        statuses.append(e.status)
    ratios_a = np.asarray(ratios, dtype=float)
    finite = np.isfinite(ratios_a) & (ratios_a > 0)
    fitted = float(np.max(ratios_a[finite])) if np.any(finite) else math.nan
    spread = float(fitted / np.min(ratios_a[finite])) if np.any(finite) else math.nan
    if any(s is not Status.FINITE for s in statuses):
        verdict = Verdict.DIVERGENT
    elif spread <= RATIO_SPREAD_LIMIT:
        verdict = Verdict.BOUND_HOLDS
    else:
        verdict = Verdict.BOUND_VIOLATED
    meta = {"noise": noise.to_dict(), "f": f.to_dict(), "x_grid_size": int(len(xg))}
    return SmoothingReport(times, k, ell, p, q, np.asarray(est), np.asarray(rhs, dtype=float), ratios_a,
                           statuses, fitted, spread, verdict, meta)


@dataclass(frozen=True)
class HolderEstimate:
    seminorm: float
    bound: float
    ratio: float
    status: Status


def default_pairs(f: TestFunction, m: int = 5, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Pairs ``(x, x + delta u)`` with Sobol anchors and ``delta`` in ``[1e-3, 1]``."""
    d = f.dimension
    anchors = default_x_grid(f, m)
    deltas = np.logspace(-3, 0, 7)
    rng = streams.generator(seed, 11)
    u = rng.standard_normal((len(anchors), d))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    x1 = np.repeat(anchors, len(deltas), axis=0)
    x2 = x1 + np.tile(deltas, len(anchors))[:, None] * np.repeat(u, len(deltas), axis=0)
    return x1, x2


def holder_seminorm_estimate(noise: NoiseSpec, t: float, f: TestFunction, beta: float, pairs=None, p: float = math.inf) -> HolderEstimate:
    """``sup |P f(x1) - P f(x2)| / |x1 - x2|^beta`` over pairs, with its moment bound.

    The bound is ``||f||_{L_p} E T_t^{-(beta + d/p)/2}``.
    """
    if not 0 < beta < 1:
        raise DomainError("beta must lie in (0, 1)")
    _check_time(t)
    d = noise.dimension
    m = moment(noise.subordinator, t, -(beta + d * _exp_inv(p)) / 2, Method.QUADRATURE)
    if m.status is not Status.FINITE:
        return HolderEstimate(math.nan, m.value, math.nan, m.status)
    x1, x2 = default_pairs(f) if pairs is None else (_points(noise, pairs[0]), _points(noise, pairs[1]))
    x1 = x1.reshape(-1, d)
    x2 = x2.reshape(-1, d)
    vals = np.asarray(apply_subordinated(noise, t, f, np.vstack([x1, x2])).value).reshape(2, -1)
    dist = np.linalg.norm(x1 - x2, axis=-1)
    ok = dist > 0
    semi = float(np.max(np.abs(vals[0, ok] - vals[1, ok]) / dist[ok] ** beta)) if np.any(ok) else 0.0
    bound = f.norm(p) * m.value
    return HolderEstimate(semi, bound, semi / bound if bound > 0 else math.nan, Status.FINITE)


@dataclass(frozen=True)
class LpNormEstimate:
    norm: float
    bound: float
    ratio: float
    status: Status


def lp_derivative_norm(
    noise: NoiseSpec,
    t: float,
    f: TestFunction,
    alpha,
    p: float,
    radius: float | None = None,
    n_grid: int = 801,
) -> LpNormEstimate:
    """``|| d^alpha P_t f ||_{L_p}`` on a uniform grid over a truncation box.

    The box has radius ``8 + support_radius`` unless given.  The bound is
    ``||f||_{L_p} E T_t^{-|alpha|/2}``.
    """
    _check_time(t)
    alpha = alpha if isinstance(alpha, MultiIndex) else MultiIndex(tuple(alpha))
    d = noise.dimension
    if alpha.dimension != d:
        raise DomainError("multi-index length must match the dimension")
    m = moment(noise.subordinator, t, -alpha.order / 2, Method.QUADRATURE)
    status = derivative_moment_status(noise, t, f, alpha.order)
    if status is not Status.FINITE:
        return LpNormEstimate(math.nan, math.inf, math.nan, status)
    radius = 8.0 + (f.support_radius or 0.0) if radius is None else radius
    n1 = n_grid if d == 1 else max(21, int(round(n_grid ** (1 / d))))
    axis = np.linspace(-radius, radius, n1)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1)
    ev = subordinated_derivative(noise, t, f, grid, alpha.order, alpha=alpha)
    vals = np.abs(np.asarray(ev.value))
    if p == math.inf:
        norm = float(np.max(vals))
    else:
        integrand = vals**p
        for _ in range(d):
            integrand = integrate.trapezoid(integrand, axis, axis=0)
        norm = float(integrand) ** (1 / p)
    bound = f.norm(p) * (m.value if m.finite else math.inf)
    return LpNormEstimate(norm, bound, norm / bound if bound > 0 else math.nan, Status.FINITE)
