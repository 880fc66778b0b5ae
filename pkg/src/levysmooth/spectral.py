"""Characteristic exponents, the Hartman-Wintner ratio and Fourier densities.

For the isotropic processes handled here ``E exp(i <xi, Y_t>) = exp(-t psi(|xi|))``.
Two normalisations of ``psi`` for ``Y = W o T`` are in use:

* ``convention="paper"``: ``psi(xi) = Phi(|xi|**2)``, the closed forms
  ``a log(1 + |xi|**2 / b)`` and ``|xi|**(2 rho)`` as usually displayed for the
  variance-gamma and stable examples;
* ``convention="probabilistic"``: ``psi(xi) = Phi(|xi|**2 / 2)``, which is the
  exponent of the simulated process with ``E exp(i xi W_s) = exp(-s xi**2 / 2)``.

The two differ by a rescaling of space (``Q = 2 I`` versus ``Q = I``) and
share the same Hartman-Wintner limit and density threshold.

The Hartman-Wintner criterion: if ``psi(r) / log(1 + r) -> inf`` the law of
``Y_t`` has a smooth density for every ``t > 0``; if the ratio tends to a
finite ``L`` then ``exp(-t psi)`` is integrable on ``R^d`` as soon as
``t L > d``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

from .errors import DomainError, NotApplicableError, UnsupportedError
from .subordinators import DriftOnly, Gamma, Stable, Status


class NoThresholdError(NotApplicableError):
    """The Hartman-Wintner ratio tends to zero, so the criterion says nothing."""


CONVENTIONS = {"paper": 1.0, "probabilistic": 0.5}


@dataclass(frozen=True)
class CharExponent:
    """Radial characteristic exponent ``r -> psi(r)`` of an isotropic process.

    ``log_rate`` is the exact limit of ``psi(r) / log(1 + r)`` when it is known
    analytically (``inf`` for power growth), and ``None`` otherwise.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    log_rate: float | None = None

    def __call__(self, xi):
        """``psi`` at a radius, or at vectors when given an array of shape ``(..., d)`` with ``d > 1``."""
        xi = np.asarray(xi, dtype=float)
        return self.evaluator(np.abs(xi))

    def at_vector(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return self.evaluator(np.linalg.norm(xi, axis=-1))


def char_exponent_from_noise(noise, convention: str = "paper") -> CharExponent:
    """Characteristic exponent of ``W o T`` for a noise with covariance ``c I``."""
    if noise.perturbation is not None:
        raise UnsupportedError("characteristic exponent with a perturbation is not supported")
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {sorted(CONVENTIONS)}")
    cov = noise.heat.covariance
    d = noise.dimension
    c = 1.0
    if cov is not None:
        c = float(cov[0, 0])
        if not np.allclose(cov, c * np.eye(d), rtol=0, atol=1e-14):
            raise UnsupportedError("only covariances proportional to the identity are supported")
    scale = CONVENTIONS[convention] * c
    spec = noise.subordinator
    phi = spec.laplace_exponent

    if isinstance(spec, Gamma):
        rate = 2 * spec.a
    elif isinstance(spec, (Stable, DriftOnly)):
        rate = math.inf
    else:
        rate = None
    return CharExponent(lambda r: phi(scale * np.asarray(r, dtype=float) ** 2), f"{spec.kind}[{convention}]", rate)


def gaussian_exponent() -> CharExponent:
    """``psi(r) = r**2 / 2``, the exponent of a standard Brownian motion at time 1."""
    return CharExponent(lambda r: 0.5 * np.asarray(r, dtype=float) ** 2, "gaussian", math.inf)


def zero_exponent() -> CharExponent:
    return CharExponent(lambda r: np.zeros_like(np.asarray(r, dtype=float)), "zero", 0.0)


class HWClass(str, Enum):
    DIVERGES = "diverges_to_infinity"
    FINITE = "finite_limit"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class HWResult:
    radii: np.ndarray
    ratios: np.ndarray
    classification: HWClass
    limit: float | None
    tail_slope: float

    def to_csv(self, psi_values: np.ndarray | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["xi", "psi", "ratio"])
        psi = self.ratios * np.log1p(self.radii) if psi_values is None else psi_values
        for r, p, q in zip(self.radii, psi, self.ratios):
            w.writerow([repr(float(r)), repr(float(p)), repr(float(q))])
        return buf.getvalue()


SLOPE_FINITE = 1e-3
SLOPE_DIVERGENT = 0.05


def default_radii() -> np.ndarray:
    return np.logspace(0, 6, 61)


def hw_ratio(psi: CharExponent, radii: Sequence[float] | None = None) -> HWResult:
    """``psi(r) / log(1 + r)`` on ``radii`` and a classification of its limit.

    The tail is the last two decades of ``radii``.  A log-log slope below
    ``SLOPE_FINITE`` means a finite limit, which is then estimated by
    extrapolating the ratio linearly in ``1 / log r`` to ``r = inf``; a
    slope above ``SLOPE_DIVERGENT`` means divergence.
    """
    r = np.asarray(default_radii() if radii is None else radii, dtype=float)
    if r.ndim != 1 or len(r) < 3 or np.any(np.diff(r) <= 0) or r[0] <= 0:
        raise DomainError("radii must be a positive increasing grid with at least 3 points")
    if r[-1] < 1e6:
        raise DomainError("the largest radius must be >= 1e6")
    vals = np.asarray(psi(r), dtype=float)
    ratios = vals / np.log1p(r)
    tail = r >= r[-1] / 100.0
    if np.count_nonzero(tail) < 3:
        tail = np.zeros_like(tail)
        tail[-3:] = True
    rt, qt = r[tail], ratios[tail]
    if np.all(qt == 0):
        return HWResult(r, ratios, HWClass.FINITE, 0.0, 0.0)
    if np.any(qt <= 0):
        return HWResult(r, ratios, HWClass.INCONCLUSIVE, None, math.nan)
    slope = float(np.polyfit(np.log(rt), np.log(qt), 1)[0])
    if slope < SLOPE_FINITE:
        coef = np.polyfit(1.0 / np.log(rt), qt, 1)
        return HWResult(r, ratios, HWClass.FINITE, float(coef[1]), slope)
    if slope > SLOPE_DIVERGENT:
        return HWResult(r, ratios, HWClass.DIVERGES, None, slope)
    return HWResult(r, ratios, HWClass.INCONCLUSIVE, None, slope)


LIMIT_AGREEMENT = 0.01


def hw_threshold_time(psi: CharExponent, d: int, radii: Sequence[float] | None = None) -> float:
    """Time beyond which ``exp(-t psi)`` is integrable on ``R^d``.

    Returns ``0.0`` when the ratio diverges and ``d / L`` for a finite limit
    ``L > 0``.  When ``L`` is known analytically it is used so that the
    threshold is exact, after checking that the numerical limit agrees
    within one percent.
    """
    if d < 1:
        raise DomainError("dimension must be >= 1")
    res = hw_ratio(psi, radii)
    if res.classification is HWClass.DIVERGES:
        return 0.0
    if res.classification is HWClass.INCONCLUSIVE:
        raise NotApplicableError("Hartman-Wintner ratio inconclusive on this grid")
    if res.limit is not None and res.limit <= 0 or psi.log_rate == 0:
        raise NoThresholdError("ratio tends to zero; the criterion gives no threshold")
    if psi.log_rate is not None and math.isfinite(psi.log_rate):
        if abs(res.limit - psi.log_rate) > LIMIT_AGREEMENT * psi.log_rate:
            raise NotApplicableError(
                f"numerical limit {res.limit} disagrees with the analytic rate {psi.log_rate}"
            )
        return d / psi.log_rate
    return d / res.limit


def integrability(psi: CharExponent, t: float, d: int) -> Status:
    """Whether ``exp(-t psi)`` is integrable on ``R^d``.

    Uses the analytic growth rate when known and the numerical
    Hartman-Wintner classification otherwise.
    """
    rate = psi.log_rate
    if rate is None:
        res = hw_ratio(psi)
        if res.classification is HWClass.DIVERGES:
            return Status.FINITE
        if res.classification is HWClass.INCONCLUSIVE:
            return Status.INCONCLUSIVE
        rate = res.limit
    if math.isinf(rate):
        return Status.FINITE
    return Status.FINITE if t * rate > d else Status.DIVERGENT


@dataclass(frozen=True)
class FourierDensity:
    value: float | np.ndarray
    status: Status


MAX_HALF_PERIODS = 400


def _iterated_average(partials: np.ndarray, levels: int = 12) -> float:
    s = np.asarray(partials, dtype=float)
    for _ in range(min(levels, len(s) - 1)):
        s = 0.5 * (s[1:] + s[:-1])
    return float(s[-1])


def _oscillatory(amp, kernel, zeros) -> float:
    """``int_0^inf amp(r) kernel(r) dr`` summed between consecutive zeros of ``kernel``.

    Stops once the amplitude is negligible; otherwise the alternating
    partial sums are accelerated by repeated averaging.
    """
    edges = np.concatenate([[0.0], zeros])
    pieces = []
    scale = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        piece = integrate.quad(lambda r: amp(r) * kernel(r), lo, hi, epsabs=1e-16, epsrel=1e-12, limit=200)[0]
        pieces.append(piece)
        scale = max(scale, abs(piece))
        if amp(hi) * (hi - lo) < 1e-16 * scale:
            return float(np.sum(pieces))
    partial = np.cumsum(pieces)
    return _iterated_average(partial[-40:])


def _radial_integral(amp, lo_scale=1.0):
    return (
        integrate.quad(amp, 0, lo_scale, epsabs=1e-14, epsrel=1e-12, limit=400)[0]
        + integrate.quad(amp, lo_scale, np.inf, epsabs=1e-14, epsrel=1e-12, limit=400)[0]
    )


def _density_1d(psi, t, y):
    amp = lambda xi: math.exp(-t * float(psi(xi)))
    if y == 0:
        return _radial_integral(amp) / math.pi
    zeros = (np.arange(1, MAX_HALF_PERIODS + 1) - 0.5) * math.pi / y
    return _oscillatory(amp, lambda xi: math.cos(xi * y), zeros) / math.pi


def _density_2d(psi, t, y):
    amp = lambda r: math.exp(-t * float(psi(r))) * r
    if y == 0:
        return _radial_integral(amp) / (2 * math.pi)
    zeros = special.jn_zeros(0, MAX_HALF_PERIODS) / y
    return _oscillatory(amp, lambda r: float(special.j0(r * y)), zeros) / (2 * math.pi)


def fourier_density(psi: CharExponent, t: float, y, d: int) -> FourierDensity:
    """``(2 pi)**-d int exp(-i <xi, y>) exp(-t psi(xi)) dxi`` for isotropic ``psi``.

    Uses the cosine transform for ``d = 1`` and the Hankel (``J_0``) transform
    for ``d = 2``.  Non-integrable ``exp(-t psi)`` gives ``DIVERGENT``.
    """
    if not t > 0:
        raise DomainError(f"t must be > 0, got {t}")
    if d not in (1, 2):
        raise UnsupportedError("Fourier inversion is implemented for d = 1, 2")
    status = integrability(psi, t, d)
    y = np.asarray(y, dtype=float)
    radial = np.abs(y) if d == 1 else np.linalg.norm(y, axis=-1)
    if status is not Status.FINITE:
        val = np.full(np.shape(radial), np.inf if status is Status.DIVERGENT else np.nan)
        return FourierDensity(float(val) if val.ndim == 0 else val, status)
    fn = _density_1d if d == 1 else _density_2d
    flat = np.atleast_1d(radial).reshape(-1)
    cache: dict[float, float] = {}
    out = np.empty(len(flat))
    for i, r in enumerate(flat):
        key = float(r)
        if key not in cache:
            cache[key] = fn(psi, t, key)
        out[i] = cache[key]
    out = out.reshape(np.shape(radial))
    return FourierDensity(float(out) if out.ndim == 0 else out, Status.FINITE)


def density_csv(y: np.ndarray, values: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["y", "value"])
    for a, b in zip(np.asarray(y).reshape(len(values), -1), np.asarray(values).reshape(-1)):
        w.writerow([" ".join(repr(float(v)) for v in a), repr(float(b))])
    return buf.getvalue()
