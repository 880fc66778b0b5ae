"""Subordinators: Laplace exponents, sampling and (negative) moments.

Three parametric families are supported:

* :class:`Stable` -- ``E exp(-lam T_t) = exp(-t lam**rho)``, ``0 < rho < 1``;
* :class:`Gamma` -- ``T_t ~ Gamma(shape=a t, rate=b)``, so that
  ``Phi(lam) = a log(1 + lam / b)``;
* :class:`DriftOnly` -- ``T_t = c t``, the deterministic clock that turns
  ``W o T`` back into a (time-changed) Brownian motion.

Negative moments are obtained from the identity

    E T_t**(-p) = Gamma(p)**-1 * int_0^inf lam**(p-1) exp(-t Phi(lam)) dlam,

which is evaluated by quadrature and cross-checked against Monte Carlo and
closed forms.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Callable, ClassVar, Sequence

import numpy as np
from scipy import integrate, special, stats

from . import streams
from .errors import DomainError, NotApplicableError


class Status(str, Enum):
    FINITE = "finite"
    DIVERGENT = "divergent"
    INCONCLUSIVE = "inconclusive"
    NOT_APPLICABLE = "not_applicable"


class Method(str, Enum):
    QUADRATURE = "quadrature"
    MONTE_CARLO = "montecarlo"
    CLOSED_FORM = "closedform"


@dataclass(frozen=True)
class MomentQuery:
    t: float
    p: float
    method: Method = Method.QUADRATURE

    def __post_init__(self):
        if not self.t > 0:
            raise DomainError(f"t must be > 0, got {self.t}")
        if not self.p > 0:
            raise DomainError(f"p must be > 0, got {self.p}")
        object.__setattr__(self, "method", Method(self.method))


@dataclass(frozen=True)
class MomentResult:
    """Value of ``E T_t**(-p)`` (or a positive moment) with its status.

    ``value`` is ``inf`` for divergent moments and ``nan`` when the
    computation was inconclusive; ``stderr`` is zero for deterministic
    methods.
    """

    value: float
    stderr: float
    status: Status
    method: Method

    @property
    def finite(self) -> bool:
        return self.status is Status.FINITE


def _divergent(method: Method) -> MomentResult:
    return MomentResult(math.inf, 0.0, Status.DIVERGENT, method)


def _check_time(t: float) -> None:
    if not t > 0:
        raise DomainError(f"t must be > 0, got {t}")


class Subordinator:
    """Base class for the parametric subordinator families."""

    kind: ClassVar[str]

    # --- Laplace exponent -------------------------------------------------
    def laplace_exponent(self, lam):
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < 0):
            raise DomainError("Laplace exponent requires lam >= 0")
        out = self._phi(lam)
        return float(out) if out.ndim == 0 else out

    def _phi(self, lam: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _phi_of_exp(self, v: np.ndarray) -> np.ndarray:
        """``Phi(exp(v))`` computed without overflow."""
        raise NotImplementedError

    # --- sampling ---------------------------------------------------------
    def sample(self, t: float, rng: np.random.Generator, size=None):
        """Draw ``T_t``; ``size=None`` returns a scalar."""
        _check_time(t)
        return np.exp(self.log_sample(t, rng, size))

    def log_sample(self, t: float, rng: np.random.Generator, size=None):
        raise NotImplementedError

    # --- law of T_t ---------------------------------------------------------
    def log_density(self, t: float, s: np.ndarray) -> np.ndarray:
        raise NotApplicableError(f"{self.kind} subordinator has no density")

    def levy_tail(self, x):
        """``m(]x, inf[)`` for the Levy measure ``m``."""
        raise NotApplicableError(f"{self.kind} subordinator has no Levy measure")

    # --- moments ------------------------------------------------------------
    def negative_moment_status(self, t: float, p: float) -> Status | None:
        """Analytic finiteness classification, ``None`` if unknown."""
        return None

    def closed_form_negative_moment(self, t: float, p: float) -> MomentResult:
        raise NotImplementedError

    def closed_form_positive_moment(self, t: float, r: float) -> MomentResult:
        raise NotImplementedError

    def _tail_beyond(self, t: float, p: float, lam_cut: float) -> float | None:
        """``int_{lam_cut}^inf lam**(p-1) exp(-t Phi(lam)) dlam`` if known."""
        return None

    def _lambda_cutoff(self, t: float, p: float) -> float:
        """Point beyond which the analytic tail (or zero) is used."""
        raise NotImplementedError

    def _support(self, t: float, kappa: float) -> tuple[float, float]:
        """Truncation ``[s_min, s_max]`` for mixture integrals over ``nu_t``."""
        raise NotImplementedError

    # --- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        raise NotImplementedError

    def params_label(self) -> str:
        return ";".join(f"{k}={v!r}" for k, v in self.to_dict().items() if k != "kind")


@dataclass(frozen=True)
class Stable(Subordinator):
    """One-sided ``rho``-stable subordinator with ``Phi(lam) = lam**rho``."""

    rho: float
    kind: ClassVar[str] = "stable"

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise DomainError(f"stable index must lie in (0, 1), got {self.rho}")

    def _phi(self, lam):
        return lam**self.rho

    def _phi_of_exp(self, v):
        return np.exp(self.rho * v)

    def _log_kanter(self, u):
        r = self.rho
        return (
            np.log(np.sin((1 - r) * u))
            + (r / (1 - r)) * np.log(np.sin(r * u))
            - np.log(np.sin(u)) / (1 - r)
        )

    def log_sample(self, t, rng, size=None):
        # Kanter's representation S = (A(U) / E)**((1 - rho) / rho), the
        # totally skewed case of the Chambers-Mallows-Stuck transform.
        _check_time(t)
        u = math.pi * (1.0 - rng.random(size))  # (0, pi]
        u = np.where(u >= math.pi, math.pi * (1 - 1e-16), u)
        e = rng.standard_exponential(size)
        r = self.rho
        out = math.log(t) / r + ((1 - r) / r) * (self._log_kanter(u) - np.log(e))
        return float(out) if size is None else out

    _GL_NODES: ClassVar[tuple] = ()

    @classmethod
    def _gauss_nodes(cls):
        if not cls._GL_NODES:
            x, w = np.polynomial.legendre.leggauss(48)
            edges = np.linspace(0.0, math.pi, 17)
            nodes, weights = [], []
            for lo, hi in zip(edges[:-1], edges[1:]):
                nodes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
                weights.append(0.5 * (hi - lo) * w)
            cls._GL_NODES = (np.concatenate(nodes), np.concatenate(weights))
        return cls._GL_NODES

    def log_density(self, t, s):
        """Log-density of ``T_t`` via Zolotarev's integral representation."""
        _check_time(t)
        s = np.asarray(s, dtype=float)
        r = self.rho
        u, w = self._gauss_nodes()
        log_a = self._log_kanter(u)
        x = np.atleast_1d(s * t ** (-1 / r))
        with np.errstate(divide="ignore"):
            log_z = -(r / (1 - r)) * np.log(x)
        # log of (1/pi) sum_j w_j A_j exp(-A_j z), stabilised by log-sum-exp
        expo = log_a[None, :] - np.exp(log_a[None, :] + log_z.reshape(-1, 1))
        m = np.max(expo, axis=1, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        with np.errstate(divide="ignore"):
            log_int = np.log(np.sum(w * np.exp(expo - m), axis=1)) + m[:, 0] - math.log(math.pi)
            out = math.log(r / (1 - r)) - np.log(x) / (1 - r) + log_int - math.log(t) / r
        # far tail: the convergent series in x**-rho, where the u-integral
        # concentrates near pi and fixed nodes lose accuracy
        big = x ** (-r) < 0.3
        if np.any(big):
            k = np.arange(1, 41)
            coef = np.exp(special.gammaln(k * r + 1) - special.gammaln(k + 1)) * np.sin(k * math.pi * r)
            coef *= (-1.0) ** (k + 1) / math.pi
            xb = x[big].reshape(-1, 1)
            ser = np.sum(coef * xb ** (-k * r), axis=1)
            out = np.where(big, 0.0, out)
            out[big] = np.log(ser) - np.log(x[big]) - math.log(t) / r
        out = np.where(s > 0, out, -np.inf)
        return out.reshape(s.shape)

    def levy_tail(self, x):
        x = np.asarray(x, dtype=float)
        return x ** (-self.rho) / special.gamma(1 - self.rho)

    def negative_moment_status(self, t, p):
        return Status.FINITE

    def closed_form_negative_moment(self, t, p):
        r = self.rho
        val = t ** (-p / r) * math.exp(special.gammaln(1 + p / r) - special.gammaln(1 + p))
        return MomentResult(val, 0.0, Status.FINITE, Method.CLOSED_FORM)

    def closed_form_positive_moment(self, t, r_exp):
        r = self.rho
        if r_exp >= r:
            return _divergent(Method.CLOSED_FORM)
        val = t ** (r_exp / r) * math.exp(special.gammaln(1 - r_exp / r) - special.gammaln(1 - r_exp))
        return MomentResult(val, 0.0, Status.FINITE, Method.CLOSED_FORM)

    def _lambda_cutoff(self, t, p):
        # beyond this point lam**(p-1) exp(-t lam**rho) < 1e-300 relative
        return (800.0 / t) ** (1 / self.rho) * max(1.0, p) ** (1 / self.rho)

    def _tail_beyond(self, t, p, lam_cut):
        return 0.0

    def _support(self, t, kappa):
        r = self.rho
        a0 = (1 - r) * r ** (r / (1 - r))
        scale = t ** (1 / r)
        s_min = scale * (a0 / (800.0 + 50.0 * kappa)) ** ((1 - r) / r)
        s_max = scale * (1.0 / (special.gamma(1 - r) * 1e-12)) ** (1 / r)
        return s_min, s_max

    def to_dict(self):
        return {"kind": "stable", "rho": self.rho}


@dataclass(frozen=True)
class Gamma(Subordinator):
    """Gamma subordinator: ``T_t ~ Gamma(shape=a t, rate=b)``."""

    a: float
    b: float
    kind: ClassVar[str] = "gamma"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise DomainError(f"gamma parameters must be positive, got a={self.a}, b={self.b}")

    def _phi(self, lam):
        return self.a * np.log1p(lam / self.b)

    def _phi_of_exp(self, v):
        return self.a * np.logaddexp(0.0, v - math.log(self.b))

    def log_sample(self, t, rng, size=None):
        _check_time(t)
        shape = self.a * t
        if shape >= 1:
            out = np.log(rng.gamma(shape, 1.0, size))
        else:
            # G(shape) = G(shape + 1) * U**(1/shape), kept in log space so
            # that small shapes do not underflow to zero.
            g = rng.gamma(shape + 1.0, 1.0, size)
            u = 1.0 - rng.random(size)
            out = np.log(g) + np.log(u) / shape
        out = out - math.log(self.b)
        return float(out) if size is None else out

    def log_density(self, t, s):
        _check_time(t)
        s = np.asarray(s, dtype=float)
        k = self.a * t
        with np.errstate(divide="ignore", invalid="ignore"):
            out = k * math.log(self.b) - special.gammaln(k) + (k - 1) * np.log(s) - self.b * s
        return np.where(s > 0, out, -np.inf)

    def levy_tail(self, x):
        x = np.asarray(x, dtype=float)
        return self.a * special.exp1(self.b * x)

    def negative_moment_status(self, t, p):
        # lam**(p-1) (1 + lam/b)**(-a t) ~ lam**(p - 1 - a t) at infinity
        return Status.FINITE if p < self.a * t else Status.DIVERGENT

    def closed_form_negative_moment(self, t, p):
        k = self.a * t
        if p >= k:
            return _divergent(Method.CLOSED_FORM)
        val = self.b**p * math.exp(special.gammaln(k - p) - special.gammaln(k))
        return MomentResult(val, 0.0, Status.FINITE, Method.CLOSED_FORM)

    def closed_form_positive_moment(self, t, r):
        k = self.a * t
        val = self.b ** (-r) * math.exp(special.gammaln(k + r) - special.gammaln(k))
        return MomentResult(val, 0.0, Status.FINITE, Method.CLOSED_FORM)

    def _lambda_cutoff(self, t, p):
        return 1e6 * self.b

    def _tail_beyond(self, t, p, lam_cut):
        # (1 + lam/b)**(-k) = (lam/b)**(-k) sum_j binom(-k, j) (b/lam)**j
        k = self.a * t
        total = 0.0
        coef = 1.0
        for j in range(12):
            if j > 0:
                coef *= (-k - (j - 1)) / j
            total += coef * self.b**j * lam_cut ** (p - k - j) / (k + j - p)
        return self.b**k * total

    def _support(self, t, kappa):
        k = self.a * t
        excess = k - kappa
        log_smin = (math.log(1e-12) + special.gammaln(k) + math.log(max(excess, 1e-300)) - k * math.log(self.b)) / max(excess, 1e-300)
        s_min = math.exp(max(log_smin, -690.0))
        s_max = float(stats.gamma.isf(1e-14, k, scale=1 / self.b))
        return s_min, s_max

    def to_dict(self):
        return {"kind": "gamma", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class DriftOnly(Subordinator):
    """Deterministic clock ``T_t = c t``."""

    c: float
    kind: ClassVar[str] = "drift"

    def __post_init__(self):
        if not self.c > 0:
            raise DomainError(f"drift slope must be > 0, got {self.c}")

    def _phi(self, lam):
        return self.c * lam

    def _phi_of_exp(self, v):
        return self.c * np.exp(v)

    def sample(self, t, rng=None, size=None):
        _check_time(t)
        return self.c * t if size is None else np.full(size, self.c * t)

    def log_sample(self, t, rng=None, size=None):
        _check_time(t)
        v = math.log(self.c * t)
        return v if size is None else np.full(size, v)

    def negative_moment_status(self, t, p):
        return Status.FINITE

    def closed_form_negative_moment(self, t, p):
        return MomentResult((self.c * t) ** (-p), 0.0, Status.FINITE, Method.CLOSED_FORM)

    def closed_form_positive_moment(self, t, r):
        return MomentResult((self.c * t) ** r, 0.0, Status.FINITE, Method.CLOSED_FORM)

    def _lambda_cutoff(self, t, p):
        return (800.0 + 10 * p) / (self.c * t)

    def _tail_beyond(self, t, p, lam_cut):
        return 0.0

    def to_dict(self):
        return {"kind": "drift", "c": self.c}


SubordinatorSpec = Subordinator

_KINDS = {"stable": (Stable, ("rho",)), "gamma": (Gamma, ("a", "b")), "drift": (DriftOnly, ("c",))}


def subordinator_from_dict(obj: dict) -> Subordinator:
    """Build a subordinator from ``{"kind": "gamma", "a": 1.0, "b": 1.0}`` etc."""
    kind = obj.get("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown subordinator kind {kind!r}; expected one of {sorted(_KINDS)}")
    cls, fields = _KINDS[kind]
    extra = set(obj) - set(fields) - {"kind"}
    if extra:
        raise ValueError(f"unexpected keys for {kind} subordinator: {sorted(extra)}")
    missing = [f for f in fields if f not in obj]
    if missing:
        raise ValueError(f"{kind} subordinator is missing {missing}")
    return cls(*(float(obj[f]) for f in fields))


# ----------------------------------------------------------------------------
# Module-level operations
# ----------------------------------------------------------------------------


def laplace_exponent(spec: Subordinator, lam):
    return spec.laplace_exponent(lam)


def sample_increment(spec: Subordinator, t: float, rng: np.random.Generator, size=None):
    """Draw ``T_t`` (equivalently an increment ``T_{s+t} - T_s``)."""
    return spec.sample(t, rng, size)


def _integrand_log(spec: Subordinator, t: float, p: float, v):
    # log of lam**p exp(-t Phi(lam)) at lam = exp(v); the extra factor lam
    # is the Jacobian of lam = exp(v)
    return p * v - t * spec._phi_of_exp(np.asarray(v, dtype=float))


def _head_and_body(spec, t, p, lam_cut):
    """Integral of lam**(p-1) exp(-t Phi) over ``[0, lam_cut]``."""
    # left end: for lam <= lam0, exp(-t Phi(lam)) = 1 - O(1e-13)
    lam0 = 1.0
    while t * float(spec._phi(np.asarray(lam0))) > 1e-13:
        lam0 *= 1e-2
    head = lam0**p / p
    v0, v1 = math.log(lam0), math.log(lam_cut)
    grid = np.linspace(v0, v1, 2001)
    vals = _integrand_log(spec, t, p, grid)
    vmode = float(grid[np.argmax(vals)])
    f = lambda v: math.exp(float(_integrand_log(spec, t, p, v)))
    pts = [v for v in (vmode - 5.0, vmode, vmode + 5.0) if v0 < v < v1]
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        body, err = integrate.quad(f, v0, v1, points=pts, epsabs=0.0, epsrel=1e-12, limit=500)
    return head + body, err


def _doubling_tail(spec, t, p, lam_cut, budget=40, rtol=1e-10):
    """Integrate the tail over doubling intervals until a Cauchy test holds.

    Returns the tail value, or ``None`` if the partial sums are still moving
    after ``budget`` doublings.
    """
    f = lambda v: math.exp(float(_integrand_log(spec, t, p, v)))
    total = 0.0
    lo = math.log(lam_cut)
    quiet = 0
    for _ in range(budget):
        hi = lo + math.log(2.0)
        piece, _err = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-12)
        total += piece
        quiet = quiet + 1 if piece <= rtol * total else 0
        if quiet >= 3:
            return total
        lo = hi
    return None


def negative_moment_quadrature(spec: Subordinator, q: MomentQuery, tail: str = "analytic") -> MomentResult:
    """``E T_t**(-p)`` by quadrature of ``lam**(p-1) exp(-t Phi(lam))``.

    ``tail="analytic"`` classifies divergence from the known tail exponent
    and sums the tail beyond a cutoff in closed form; ``tail="doubling"``
    ignores that knowledge and integrates over doubling intervals, giving
    up with ``Status.INCONCLUSIVE`` when the partial sums do not settle.
    """
    t, p = q.t, q.p
    method = Method.QUADRATURE
    if tail not in ("analytic", "doubling"):
        raise ValueError("tail must be 'analytic' or 'doubling'")
    known = spec.negative_moment_status(t, p) if tail == "analytic" else None
    if known is Status.DIVERGENT:
        return _divergent(method)
    lam_cut = spec._lambda_cutoff(t, p)
    try:
        head, _ = _head_and_body(spec, t, p, lam_cut)
    except integrate.IntegrationWarning:
        return MomentResult(math.nan, 0.0, Status.INCONCLUSIVE, method)
    rest = spec._tail_beyond(t, p, lam_cut) if tail == "analytic" else None
    if rest is None:
        rest = _doubling_tail(spec, t, p, lam_cut)
        if rest is None:
            return MomentResult(math.nan, 0.0, Status.INCONCLUSIVE, method)
    val = (head + rest) / special.gamma(p)
    return MomentResult(val, 0.0, Status.FINITE, method)


def negative_moment_mc(
    spec: Subordinator,
    q: MomentQuery,
    n: int,
    seed: int = 0,
    threads: int | None = None,
) -> MomentResult:
    """Sample mean of ``T_t**(-p)`` with its standard error.

    The standard error is the plain sample estimate; when ``T_t**(-p)`` has
    infinite variance it understates the true error, which is reported as
    is rather than corrected.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    t, p = q.t, q.p
    if isinstance(spec, DriftOnly):
        return MomentResult((spec.c * t) ** (-p), 0.0, Status.FINITE, Method.MONTE_CARLO)
    mean, se = streams.chunked_stats(
        lambda rng, m: np.exp(-p * spec.log_sample(t, rng, m)),
        n,
        seed,
        (streams.STREAM_MOMENTS,),
        threads,
    )
    return MomentResult(float(mean), float(se), Status.FINITE, Method.MONTE_CARLO)


def negative_moment(spec: Subordinator, q: MomentQuery, n: int = 10**6, seed: int = 0) -> MomentResult:
    """Dispatch on ``q.method``."""
    if q.method is Method.CLOSED_FORM:
        return spec.closed_form_negative_moment(q.t, q.p)
    if q.method is Method.MONTE_CARLO:
        return negative_moment_mc(spec, q, n, seed)
    return negative_moment_quadrature(spec, q)


def positive_moment_quadrature(spec: Subordinator, t: float, r: float) -> MomentResult:
    """``E T_t**r`` for ``0 < r < 1`` from ``r/Gamma(1-r) int (1-e^{-t Phi}) lam^{-r-1}``."""
    if not 0 < r < 1:
        raise DomainError("quadrature route covers 0 < r < 1 only")
    if isinstance(spec, Stable) and r >= spec.rho:
        return _divergent(Method.QUADRATURE)

    def f(v):
        lam = math.exp(v)
        return -math.expm1(-t * float(spec._phi_of_exp(np.asarray(v)))) * lam ** (-r)

    v0 = math.log(1e-300) / 2
    v1 = 700.0
    pts = list(np.arange(-60.0, 61.0, 10.0))
    val, _ = integrate.quad(f, v0, v1, points=pts, epsabs=0.0, epsrel=1e-11, limit=800)
    return MomentResult(r / special.gamma(1 - r) * val, 0.0, Status.FINITE, Method.QUADRATURE)


def moment(spec: Subordinator, t: float, r: float, method: Method | str = Method.QUADRATURE) -> MomentResult:
    """``E T_t**r`` for any real ``r``.

    Negative ``r`` goes through :func:`negative_moment`; ``r = 0`` gives 1;
    positive ``r`` uses closed forms (or the Laplace-integral route for
    ``0 < r < 1`` when ``method`` is quadrature).
    """
    _check_time(t)
    method = Method(method)
    if r < 0:
        return negative_moment(spec, MomentQuery(t, -r, method))
    if r == 0:
        return MomentResult(1.0, 0.0, Status.FINITE, method)
    if method is Method.QUADRATURE and r < 1 and not isinstance(spec, DriftOnly):
        return positive_moment_quadrature(spec, t, r)
    return spec.closed_form_positive_moment(t, r)


@dataclass(frozen=True)
class TailFit:
    fitted_C: float
    fitted_exponent: float
    consistent: bool
    max_local_deviation: float


def tauberian_tail_check(spec: Subordinator, p: float, tol: float = 0.01) -> TailFit:
    """Fit ``m(]x, inf[) ~ C x**(-p)`` near zero on a log grid.

    The fit is consistent when the fitted exponent is within ``tol`` of
    ``p`` and the local log-log slopes along the grid stay within ``tol`` of
    the fitted one (i.e. the tail really is a power law there).
    """
    if not 0 < p < 1:
        raise DomainError("p must lie in (0, 1)")
    if isinstance(spec, DriftOnly):
        raise NotApplicableError("drift-only subordinator has no Levy measure")
    x = np.logspace(-10, -4, 61)
    lx = np.log(x)
    ly = np.log(spec.levy_tail(x))
    slope, intercept = np.polyfit(lx, ly, 1)
    local = np.gradient(ly, lx)
    dev = float(np.max(np.abs(local - slope)))
    exponent = -float(slope)
    ok = abs(exponent - p) <= tol and dev <= tol
    return TailFit(math.exp(intercept), exponent, bool(ok), dev)


# ----------------------------------------------------------------------------
# Integration against the law of T_t
# ----------------------------------------------------------------------------


def mixture_expectation(
    spec: Subordinator,
    t: float,
    g: Callable[[float], np.ndarray],
    *,
    singular_power: float = 0.0,
    scales: Sequence[float] = (),
    epsabs: float = 1e-12,
    epsrel: float = 1e-10,
) -> np.ndarray:
    """``E g(T_t)`` for a (vector valued) function ``g`` of the clock.

    ``singular_power`` declares that ``g(s) = O(s**-kappa)`` as ``s -> 0``;
    the truncation point ``s_min`` is chosen so that the omitted piece is
    below ``1e-12`` under that growth, and for the Gamma family the omitted
    piece is added back from the leading power ``g(s) ~ C s**-kappa``.
    ``scales`` are clock values where ``g`` changes behaviour (squared
    distances to discontinuities, say); they become quadrature breakpoints.

    The caller is responsible for checking that the mixture converges
    (e.g. ``E T_t**-kappa < inf``).
    """
    _check_time(t)
    if isinstance(spec, DriftOnly):
        return np.asarray(g(spec.c * t), dtype=float)
    kappa = float(singular_power)
    s_min, s_max = spec._support(t, kappa)
    v_lo, v_hi = math.log(s_min), math.log(s_max)

    def integrand(v):
        s = math.exp(v)
        w = math.exp(float(spec.log_density(t, np.asarray([s]))[0]) + v)
        if w == 0.0:
            return np.zeros_like(np.asarray(g(s_max), dtype=float))
        return w * np.asarray(g(s), dtype=float)

    pts = sorted({math.log(s) for s in scales if s_min < s < s_max})
    if isinstance(spec, Gamma):
        mode = math.log(max(spec.a * t, 1e-3) / spec.b)
        if v_lo < mode < v_hi:
            pts.append(mode)
    pts = sorted(set(pts))
    edges = [v_lo] + pts + [v_hi]
    total = None
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi - lo < 1e-12:
            continue
        val, _err = integrate.quad_vec(integrand, lo, hi, epsabs=epsabs, epsrel=epsrel, limit=2000)
        total = val if total is None else total + val
    if isinstance(spec, Gamma) and kappa > 0:
        k = spec.a * t
        lead = np.asarray(g(s_min), dtype=float) * s_min**kappa
        total = total + lead * math.exp(k * math.log(spec.b) - special.gammaln(k)) * s_min ** (k - kappa) / (k - kappa)
    return total
