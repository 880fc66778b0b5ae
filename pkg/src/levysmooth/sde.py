"""Euler schemes for SDEs driven by subordinated Brownian motion.

Two equations are simulated:

* additive: ``dX = b(X) dt + dZ`` with ``Z = W o T + xi``;
* multiplicative: ``dX = b(t, X) dt + sigma(t, X) dY`` with ``Y = W o T``.

Each step draws the subordinator increment ``dT`` over the step and then
the conditional Gaussian ``sqrt(dT) Q^{1/2} G``, so the noise increment is
exact in law and only the drift/diffusion coupling is discretised.

Paths are simulated in fixed-size chunks; chunk ``i`` uses substreams
``(seed, STREAM_*, i)``, so results depend on the seed and the path count
only.  Several initial points can share the same noise (common random
numbers), which is what the continuity profile relies on.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import integrate, signal, stats

from . import kernels, streams
from .errors import DomainError, NotApplicableError, UnsupportedError
from .semigroup import (
    FractionalGaussian,
    NoiseSpec,
    TestFunction,
    ZeroPerturbation,
    apply_subordinated,
    noise_from_dict,
    subordinated_derivative,
)
from .subordinators import Gamma, Stable, Status, mixture_expectation

# ----------------------------------------------------------------------------
# Coefficients
# ----------------------------------------------------------------------------


class Growth(str, Enum):
    BOUNDED = "bounded"
    LINEAR = "linear"
    POLYNOMIAL = "polynomial"


@dataclass(frozen=True)
class LinearDrift:
    """``b(x) = coef * x``."""

    coef: float
    kind = "linear"
    growth = Growth.LINEAR
    ell = 1.0

    def __call__(self, t, x):
        return self.coef * x

    def to_dict(self):
        return {"kind": "linear", "coef": self.coef}


@dataclass(frozen=True)
class TanhDrift:
    """``b(x) = scale * tanh(x)`` componentwise: bounded and smooth."""

    scale: float
    kind = "tanh"
    growth = Growth.BOUNDED
    ell = 0.0

    def __call__(self, t, x):
        return self.scale * np.tanh(x)

    def to_dict(self):
        return {"kind": "tanh", "scale": self.scale}


@dataclass(frozen=True)
class ZeroDrift:
    kind = "zero"
    growth = Growth.BOUNDED
    ell = 0.0

    def __call__(self, t, x):
        return np.zeros_like(x)

    def to_dict(self):
        return {"kind": "zero"}


@dataclass(frozen=True)
class SinDiffusion:
    """``sigma(x) = diag(base + amp * sin(x_i))``; elliptic when ``base > |amp|``."""

    base: float = 1.0
    amp: float = 0.1
    kind = "sin"

    def __post_init__(self):
        if not self.base > abs(self.amp):
            raise DomainError("sin diffusion needs base > |amp| for ellipticity")

    @property
    def ellipticity(self) -> float:
        return self.base - abs(self.amp)

    def __call__(self, t, x):
        return self.base + self.amp * np.sin(x)  # diagonal entries

    def to_dict(self):
        return {"kind": "sin", "base": self.base, "amp": self.amp}


@dataclass(frozen=True)
class ConstantDiffusion:
    """``sigma = scale * I``."""

    scale: float = 1.0
    kind = "constant"

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError("diffusion scale must be > 0")

    @property
    def ellipticity(self) -> float:
        return self.scale

    def __call__(self, t, x):
        return np.full_like(x, self.scale)

    def to_dict(self):
        return {"kind": "constant", "scale": self.scale}


def drift_from_dict(obj: dict | None):
    if obj is None:
        return ZeroDrift()
    kind = obj.get("kind")
    if kind == "linear":
        return LinearDrift(float(obj["coef"]))
    if kind == "tanh":
        return TanhDrift(float(obj["scale"]))
    if kind == "zero":
        return ZeroDrift()
    raise ValueError(f"unknown drift kind {kind!r}")


def diffusion_from_dict(obj: dict | None):
    if obj is None:
        return None
    kind = obj.get("kind")
    if kind == "sin":
        return SinDiffusion(float(obj.get("base", 1.0)), float(obj.get("amp", 0.1)))
    if kind == "constant":
        return ConstantDiffusion(float(obj.get("scale", 1.0)))
    raise ValueError(f"unknown diffusion kind {kind!r}")


@dataclass(frozen=True)
class SdeSpec:
    noise: NoiseSpec
    drift: object = field(default_factory=ZeroDrift)
    diffusion: object | None = None

    def __post_init__(self):
        if self.diffusion is not None and self.noise.perturbation is not None:
            raise UnsupportedError("the multiplicative equation is driven by W o T only")
        pert = self.noise.perturbation
        if pert is not None and not isinstance(pert, ZeroPerturbation):
            if not (isinstance(pert, FractionalGaussian) and pert.hurst == 0.5):
                raise UnsupportedError(
                    "path simulation needs independent perturbation increments (zero or H = 1/2)"
                )

    @property
    def dimension(self) -> int:
        return self.noise.dimension

    def to_dict(self) -> dict:
        out = {"noise": self.noise.to_dict(), "drift": self.drift.to_dict()}
        if self.diffusion is not None:
            out["diffusion"] = self.diffusion.to_dict()
        return out


def sde_from_dict(obj: dict) -> SdeSpec:
    return SdeSpec(noise_from_dict(obj["noise"]), drift_from_dict(obj.get("drift")), diffusion_from_dict(obj.get("diffusion")))


def validate_coefficients(spec: SdeSpec, radius: float = 1e3, n: int = 2001) -> list[str]:
    """Check declared drift growth and diffusion ellipticity on a probe grid."""
    d = spec.dimension
    r = np.concatenate([-np.logspace(-2, math.log10(radius), n // 2)[::-1], [0.0], np.logspace(-2, math.log10(radius), n // 2)])
    x = np.repeat(r[:, None], d, axis=1)
    problems = []
    b = np.asarray(spec.drift(0.0, x))
    ratio = np.linalg.norm(b, axis=-1) / (1 + np.abs(r)) ** spec.drift.ell
    inner = ratio[np.abs(r) <= radius / 10]
    if np.max(ratio) > 10 * max(np.max(inner), 1e-300) and np.max(ratio) > 1e-12:
        problems.append(f"drift grows faster than declared ({spec.drift.growth.value})")
    if spec.diffusion is not None:
        sig = np.asarray(spec.diffusion(0.0, x))
        if np.min(np.abs(sig)) < spec.diffusion.ellipticity * (1 - 1e-12):
            problems.append("diffusion below its ellipticity floor")
    return problems


# ----------------------------------------------------------------------------
# Path engine
# ----------------------------------------------------------------------------


def time_grid(t: float, h: float, snapshots: Sequence[float] = ()) -> np.ndarray:
    """Uniform steps of size ``h`` on ``[0, t]`` merged with the snapshot times."""
    if not t > 0:
        raise DomainError(f"t must be > 0, got {t}")
    if not 0 < h <= t:
        raise DomainError(f"step must satisfy 0 < h <= t, got h={h}")
    n = int(math.ceil(t / h - 1e-9))
    grid = np.linspace(0.0, t, n + 1)
    snaps = np.asarray(list(snapshots), dtype=float)
    if snaps.size:
        if np.any(snaps < 0) or np.any(snaps > t * (1 + 1e-12)):
            raise DomainError("snapshot times must lie in [0, t]")
        grid = np.union1d(grid, snaps)
        # drop near-duplicates created by rounding
        keep = np.concatenate([[True], np.diff(grid) > 1e-12 * t])
        grid = grid[keep]
    return grid


def _simulate_chunk(spec: SdeSpec, x0: np.ndarray, grid: np.ndarray, snap_idx: np.ndarray, m: int, seed: int, chunk: int):
    """Simulate ``m`` paths from each row of ``x0`` (shape ``(k, d)``).

    Returns ``(values, diverged, noise)`` with values of shape
    ``(n_snap, m, k, d)``, a boolean ``(m, k)`` mask of paths that left the
    finite range, and the accumulated noise ``Z_t`` of shape ``(m, d)``
    (the terminal value of the driftless equation started at 0).
    """
    d = spec.dimension
    rt = streams.generator(seed, streams.STREAM_PATHS, streams.STREAM_SUBORDINATOR, chunk)
    rg = streams.generator(seed, streams.STREAM_PATHS, streams.STREAM_GAUSSIAN, chunk)
    rx = streams.generator(seed, streams.STREAM_PATHS, streams.STREAM_PERTURBATION, chunk)
    chol = spec.noise.heat.cholesky
    sub = spec.noise.subordinator
    pert = spec.noise.perturbation
    brownian_pert = isinstance(pert, FractionalGaussian)
    x = np.broadcast_to(x0, (m,) + x0.shape).astype(float).copy()
    out = np.empty((len(snap_idx), m) + x0.shape)
    noise = np.zeros((m, d))
    pos = {int(j): i for i, j in enumerate(snap_idx)}
    if 0 in pos:
        out[pos[0]] = x
    for j in range(1, len(grid)):
        t0 = grid[j - 1]
        dt = grid[j] - t0
        dT = sub.sample(dt, rt, m)
        dW = (np.sqrt(dT)[:, None] * rg.standard_normal((m, d))) @ chol.T
        drift = spec.drift(t0, x)
        if spec.diffusion is None:
            step = dW
            if brownian_pert:
                step = step + pert.scale * math.sqrt(dt) * rx.standard_normal((m, d))
            noise += step
            x = x + drift * dt + step[:, None, :]
        else:
            x = x + drift * dt + spec.diffusion(t0, x) * dW[:, None, :]
        if j in pos:
            out[pos[j]] = x
    diverged = ~np.all(np.isfinite(out), axis=(0, 3))
    return out, diverged, noise


@dataclass
class SimulationResult:
    times: np.ndarray
    x0: np.ndarray
    values: np.ndarray  # (n_snap, n, k, d)
    diverged: np.ndarray  # (n, k)
    h: float
    seed: int


def simulate(
    spec: SdeSpec,
    x0,
    t: float,
    h: float,
    n: int,
    seed: int = 0,
    snapshots: Sequence[float] | None = None,
    threads: int | None = None,
) -> SimulationResult:
    """Simulate ``n`` paths from every initial point, sharing the noise across points."""
    if n < 1:
        raise DomainError("n must be >= 1")
    d = spec.dimension
    x0 = np.asarray(x0, dtype=float)
    if d == 1 and (x0.ndim == 0 or x0.shape[-1] != 1):
        x0 = x0[..., None]
    x0 = x0.reshape(-1, d)
    snaps = [t] if snapshots is None else list(snapshots)
    grid = time_grid(t, h, snaps)
    snap_idx = np.array([int(np.argmin(np.abs(grid - s))) for s in snaps])
    sizes = streams.chunk_sizes(n)
    parts = streams.parallel_map(
        lambda i: _simulate_chunk(spec, x0, grid, snap_idx, sizes[i], seed, i), list(range(len(sizes))), threads
    )
    values = np.concatenate([p[0] for p in parts], axis=1)
    diverged = np.concatenate([p[1] for p in parts], axis=0)
    return SimulationResult(grid[snap_idx], x0, values, diverged, h, seed)


def simulate_reduce(spec: SdeSpec, x0, t: float, h: float, n: int, reducer, seed: int = 0, snapshots=None, threads=None):
    """Like :func:`simulate` but maps each chunk through ``reducer(values, diverged, noise)``.

    Returns the list of per-chunk reductions in chunk order, so memory
    stays bounded by one chunk per worker.
    """
    d = spec.dimension
    x0 = np.asarray(x0, dtype=float).reshape(-1, d)
    snaps = [t] if snapshots is None else list(snapshots)
    grid = time_grid(t, h, snaps)
    snap_idx = np.array([int(np.argmin(np.abs(grid - s))) for s in snaps])
    sizes = streams.chunk_sizes(n)

    def work(i):
        return reducer(*_simulate_chunk(spec, x0, grid, snap_idx, sizes[i], seed, i))

    return streams.parallel_map(work, list(range(len(sizes))), threads)


def _single_point(spec: SdeSpec, x):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != spec.dimension:
        raise DomainError("initial point has the wrong dimension")
    return x


def euler_additive(spec: SdeSpec, x, t: float, h: float, rng_seed: int = 0, n: int = 1) -> np.ndarray:
    """Terminal values ``X_t^x`` of ``n`` paths of the additive equation (NaN for diverged paths)."""
    if spec.diffusion is not None:
        raise DomainError("spec has a diffusion coefficient; use euler_multiplicative")
    res = simulate(spec, _single_point(spec, x), t, h, n, rng_seed)
    return res.values[-1, :, 0, :]


def euler_multiplicative(spec: SdeSpec, x, t: float, h: float, rng_seed: int = 0, n: int = 1) -> np.ndarray:
    """Terminal values of ``n`` paths of ``dX = b dt + sigma(X) dY``."""
    if spec.diffusion is None:
        raise DomainError("spec has no diffusion coefficient; use euler_additive")
    res = simulate(spec, _single_point(spec, x), t, h, n, rng_seed)
    return res.values[-1, :, 0, :]


# ----------------------------------------------------------------------------
# Path batches
# ----------------------------------------------------------------------------

MAGIC = b"LSMB"


@dataclass
class PathBatch:
    """Terminal values of ``n`` paths started at ``x0``."""

    x0: np.ndarray
    t: float
    h: float
    seed: int
    values: np.ndarray  # (n, d)
    diverged: int = 0

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.values.shape[1])

    def to_bytes(self) -> bytes:
        """``LSMB``, ``d`` (u32), ``n`` (u64), then row-major little-endian float64 values."""
        header = MAGIC + struct.pack("<IQ", self.dimension, self.n)
        return header + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @staticmethod
    def values_from_bytes(data: bytes) -> np.ndarray:
        if data[:4] != MAGIC:
            raise ValueError("not a path batch file (bad magic)")
        d, n = struct.unpack("<IQ", data[4:16])
        body = np.frombuffer(data, dtype="<f8", offset=16)
        if body.size != d * n:
            raise ValueError(f"truncated path batch: expected {d * n} values, found {body.size}")
        return body.reshape(n, d).astype(float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(self.dimension)])
        for row in self.values:
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def path_batch(spec: SdeSpec, x, t: float, h: float, n: int, seed: int = 0, threads: int | None = None) -> PathBatch:
    res = simulate(spec, _single_point(spec, x), t, h, n, seed, threads=threads)
    return PathBatch(res.x0[0], float(t), float(h), int(seed), res.values[-1, :, 0, :], int(res.diverged.sum()))


# ----------------------------------------------------------------------------
# Monte Carlo semigroup
# ----------------------------------------------------------------------------

UNRELIABLE_FRACTION = 0.01


@dataclass(frozen=True)
class MCEstimate:
    value: float | np.ndarray
    stderr: float | np.ndarray
    diverged: int
    reliable: bool


def _mean_se(vals: np.ndarray, ok: np.ndarray):
    """Column means and standard errors over rows flagged ``ok``."""
    cnt = ok.sum(axis=0)
    v = np.where(ok, vals, 0.0)
    mean = v.sum(axis=0) / np.maximum(cnt, 1)
    var = (np.where(ok, (vals - mean) ** 2, 0.0)).sum(axis=0) / np.maximum(cnt - 1, 1)
    return mean, np.sqrt(var / np.maximum(cnt, 1))


def mc_semigroup(spec: SdeSpec, t: float, f: TestFunction, x, n: int, h: float, seed: int = 0, threads: int | None = None) -> MCEstimate:
    """``P^X_t f(x) = E f(X_t^x)`` with diverged paths excluded and counted."""
    d = spec.dimension
    xs = np.asarray(x, dtype=float)
    if d == 1 and (xs.ndim == 0 or xs.shape[-1] != 1):
        xs = xs[..., None]
    shape = xs.shape[:-1]
    res = simulate(spec, xs.reshape(-1, d), t, h, n, seed, threads=threads)
    vals = np.asarray(f(np.nan_to_num(res.values[-1], nan=0.0, posinf=0.0, neginf=0.0)), dtype=float)
    ok = ~res.diverged
    mean, se = _mean_se(vals, ok)
    div = int(res.diverged.sum())
    reliable = div <= UNRELIABLE_FRACTION * res.diverged.size
    unwrap = lambda a: float(a.reshape(shape)) if a.reshape(shape).ndim == 0 else a.reshape(shape)
    return MCEstimate(unwrap(mean), unwrap(se), div, reliable)


# ----------------------------------------------------------------------------
# Strong Feller profile
# ----------------------------------------------------------------------------


@dataclass
class ContinuityProfile:
    center: np.ndarray
    offsets: np.ndarray
    diffs: np.ndarray
    stderr: np.ndarray
    spearman: float
    spearman_pvalue: float
    monotone: bool
    shrink_factor: float

    @property
    def verdict(self) -> str:
        if self.monotone and self.shrink_factor >= 2 and self.spearman > 0 and self.spearman_pvalue < 0.05:
            return "consistent with strong Feller"
        return "no evidence of continuity"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["offset", "diff", "stderr"])
        for o, dv, s in zip(self.offsets, self.diffs, self.stderr):
            w.writerow([repr(float(o)), repr(float(dv)), repr(float(s))])
        return buf.getvalue()


def strong_feller_profile(
    spec: SdeSpec,
    t: float,
    f: TestFunction,
    x0,
    offsets: Sequence[float],
    n: int,
    h: float,
    seed: int = 0,
    direction=None,
    threads: int | None = None,
) -> ContinuityProfile:
    """Paired estimates of ``|P_t f(x0 + h_j u) - P_t f(x0)|`` with common random numbers.

    All offsets are simulated with the same noise.  The profile is
    monotone when each difference is at most the previous one plus two
    standard errors of their difference; ``shrink_factor`` is the ratio of
    the largest-offset to the smallest-offset difference.
    """
    offsets = np.asarray(offsets, dtype=float)
    if np.any(offsets < 0) or np.any(np.diff(offsets) >= 0):
        raise DomainError("offsets must be nonnegative and strictly decreasing")
    d = spec.dimension
    x0 = _single_point(spec, x0)
    u = np.eye(d)[0] if direction is None else np.asarray(direction, dtype=float) / np.linalg.norm(direction)
    starts = np.vstack([x0[None, :], x0[None, :] + offsets[:, None] * u[None, :]])
    res = simulate(spec, starts, t, h, n, seed, threads=threads)
    vals = np.asarray(f(np.nan_to_num(res.values[-1])), dtype=float)  # (n, k)
    ok = ~np.any(res.diverged, axis=1)
    paired = vals[ok, 1:] - vals[ok, :1]
    mean = paired.mean(axis=0)
    se = paired.std(axis=0, ddof=1) / math.sqrt(max(ok.sum(), 1))
    diffs = np.abs(mean)
    monotone = True
    for j in range(1, len(diffs)):
        dd = paired[:, j] - paired[:, j - 1]
        se_pair = dd.std(ddof=1) / math.sqrt(len(dd))
        if diffs[j] > diffs[j - 1] + 2 * se_pair:
            monotone = False
    if np.ptp(diffs) == 0:
        rho, pval = 0.0, 1.0
    else:
        rho, pval = stats.spearmanr(offsets, diffs)
    # a positive correlation is the one-sided alternative of interest
    pval = pval / 2 if rho > 0 else 1 - pval / 2
    shrink = float(diffs[0] / diffs[-1]) if diffs[-1] > 0 else math.inf
    return ContinuityProfile(x0, offsets, diffs, se, float(rho), float(pval), monotone, shrink)


# ----------------------------------------------------------------------------
# Duhamel residual
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class DuhamelLevel:
    """Discretization of one Duhamel check.

    ``n`` paths, ``nodes`` points in the s-quadrature, Euler step ``h``,
    and the kernel smoothing ``bandwidth`` (defaults to ``h``).
    """

    n: int
    nodes: int
    h: float
    bandwidth: float | None = None


DEFAULT_LADDER = (DuhamelLevel(62_500, 16, 0.04), DuhamelLevel(250_000, 32, 0.02), DuhamelLevel(1_000_000, 64, 0.01))


@dataclass
class DuhamelResult:
    x: np.ndarray
    lhs: np.ndarray
    lhs_stderr: np.ndarray
    lhs_plain: np.ndarray
    rhs: np.ndarray
    residual: float
    eq11_holds: bool
    level: DuhamelLevel

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "lhs", "lhs_stderr", "lhs_plain", "rhs", "residual"])
        for x, l, s, lp, r in zip(self.x, self.lhs, self.lhs_stderr, self.lhs_plain, self.rhs):
            w.writerow([repr(float(v)) for v in (x, l, s, lp, r, abs(l - r))])
        return buf.getvalue()


def drift_integrability(spec: SdeSpec, delta: float = 0.5) -> bool:
    """Whether ``int_0^delta E (T_s^{-1/2} + T_s^{(l-1)/2}) ds < inf``.

    Decided from the small-time behaviour of the moments: Gamma clocks have
    ``E T_s^{-1/2} = inf`` for ``s <= 1/(2a)``, which is not integrable;
    stable clocks have ``E T_s^{-1/2} ~ s^{-1/(2 rho)}``, integrable iff
    ``rho > 1/2``; positive moments are handled through ``E T_s^r``.
    """
    sub = spec.noise.subordinator
    ell = spec.drift.ell
    if isinstance(sub, Gamma):
        return False
    if isinstance(sub, Stable):
        ok = 1 / (2 * sub.rho) < 1
        r = (ell - 1) / 2
        if r < 0:
            ok = ok and (-r / sub.rho) < 1
        elif r > 0:
            ok = ok and r < sub.rho
        return ok
    return True


def _smoothed_density_table(noise: NoiseSpec, s: float, bandwidth: float):
    """``u -> int p_{sigma + bw^2}(u) nu_s(dsigma)``, the density of ``Y_s + bw G``.

    Adding an independent ``N(0, bw^2)`` keeps the kernel bounded by
    ``(2 pi bw^2)^{-1/2}`` even where ``p^Y_s`` itself has a singularity,
    so Monte Carlo averages against it have finite variance.  The price is
    an ``O(bw^2)`` bias, which vanishes as the bandwidth is refined.
    """
    u = np.concatenate([[0.0], np.logspace(math.log10(bandwidth / 50), math.log10(60.0), 400)])
    var = bandwidth**2
    vals = mixture_expectation(
        noise.subordinator, s, lambda sig: kernels.heat_kernel(noise.heat, sig + var, u[:, None]),
        scales=[v * v for v in np.logspace(math.log10(bandwidth), 1, 12)],
    )
    logv = np.log(np.maximum(np.asarray(vals, dtype=float), 1e-300))

    def interp(y):
        a = np.abs(y)
        return np.where(a > u[-1], 0.0, np.exp(np.interp(a, u, logv)))

    return interp


def _derivative_table(noise: NoiseSpec, s: float, f: TestFunction, bandwidth: float):
    """``y -> d/dy E f(y + Y_s + bw G)`` for a one-dimensional test function."""
    lo, hi = f.params.get("lo"), f.params.get("hi")
    if f.name == "box" and lo[0] is not None and hi[0] is not None:
        dens = _smoothed_density_table(noise, s, bandwidth)
        a, b = float(lo[0]), float(hi[0])
        return lambda y: dens(y - a) - dens(y - b)
    if not f.smooth:
        raise UnsupportedError("the Duhamel check supports boxes and smooth test functions")
    radius = 12.0 + (f.support_radius or 0.0)
    grid = np.linspace(-radius, radius, 2401)
    ev = subordinated_derivative(noise, s, f, grid, 1)
    vals = np.asarray(ev.value).reshape(-1)
    return lambda y: np.interp(y, grid, vals, left=0.0, right=0.0)


def duhamel_residual(
    spec: SdeSpec,
    t: float,
    f: TestFunction,
    x_grid,
    level: DuhamelLevel = DEFAULT_LADDER[-1],
    seed: int = 0,
    strict: bool = False,
    threads: int | None = None,
) -> DuhamelResult:
    """Residual ``sup_x |P^X_t f - P^Y_t f - int_0^t P^X_{t-s} <b, D P^Y_s f> ds|``.

    Both ``P^X`` terms come from one Euler path batch with snapshots at
    ``t - s_j``.  The left side uses the driftless copy ``x + Z_t`` driven
    by the same noise as a control variate: ``P^X_t f(x)`` is estimated by
    ``P^Y_t f(x) + mean(f(X_t) - f(x + Z_t))``, which is unbiased and has a
    smaller variance than the plain mean (reported as ``lhs_plain``).  The s-integral uses ``s = t u**2`` with a midpoint rule
    in ``u``, which absorbs an ``s**(-1/2)`` singularity.  The derivative
    ``D P^Y_s f`` is evaluated on ``Y_s + bw G`` (see
    :func:`_smoothed_density_table`); ``bw`` is refined with the level.  When the drift
    integrability condition fails the check is still carried out pointwise
    and ``eq11_holds`` is ``False``; ``strict=True`` refuses instead.
    """
    if spec.dimension != 1:
        raise UnsupportedError("the Duhamel check is implemented for d = 1")
    if spec.diffusion is not None or spec.noise.perturbation is not None:
        raise UnsupportedError("the Duhamel check needs additive noise without perturbation")
    if f.support_radius is None:
        raise DomainError("the Duhamel check needs a compactly supported f")
    holds = drift_integrability(spec)
    if strict and not holds:
        raise NotApplicableError("the drift integrability condition fails for this clock")
    xs = np.asarray(x_grid, dtype=float).reshape(-1)
    J = level.nodes
    u = (np.arange(J) + 0.5) / J
    s_nodes = t * u**2
    weights = 2 * t * u / J
    snapshots = list(t - s_nodes) + [t]
    bw = level.h if level.bandwidth is None else level.bandwidth
    tables = [_derivative_table(spec.noise, float(s), f, bw) for s in s_nodes]

    def reducer(values, diverged, noise):
        ok = ~diverged
        fv = np.where(ok, np.asarray(f(np.nan_to_num(values[-1])), dtype=float), 0.0)
        fy = np.where(ok, np.asarray(f(xs[None, :, None] + noise[:, None, :]), dtype=float), 0.0)
        paired = fv - fy
        integral = np.zeros(len(xs))
        for j, s in enumerate(s_nodes):
            y = np.nan_to_num(values[j, :, :, 0])
            g = np.where(ok, spec.drift(t - s, y) * tables[j](y), 0.0)
            integral += weights[j] * g.sum(axis=0)
        return ok.sum(axis=0), fv.sum(axis=0), paired.sum(axis=0), (paired**2).sum(axis=0), integral

    parts = simulate_reduce(spec, xs[:, None], t, level.h, level.n, reducer, seed, snapshots, threads)
    cnt = sum(p[0] for p in parts)
    plain = sum(p[1] for p in parts) / cnt
    mean_pair = sum(p[2] for p in parts) / cnt
    var_pair = np.maximum(sum(p[3] for p in parts) / cnt - mean_pair**2, 0.0)
    py = np.asarray(apply_subordinated(spec.noise, t, f, xs).value, dtype=float).reshape(-1)
    lhs = py + mean_pair
    lhs_se = np.sqrt(var_pair / np.maximum(cnt - 1, 1))
    rhs = py + sum(p[4] for p in parts) / cnt
    residual = float(np.max(np.abs(lhs - rhs)))
    return DuhamelResult(xs, lhs, lhs_se, plain, rhs, residual, holds, level)


# ----------------------------------------------------------------------------
# Empirical densities
# ----------------------------------------------------------------------------


def _kde_direct(samples, y, bandwidth, chunk=1 << 14):
    total = np.zeros_like(y)
    for start in range(0, len(samples), chunk):
        z = (y[None, :] - samples[start : start + chunk, None]) / bandwidth
        total += np.exp(-0.5 * z * z).sum(axis=0)
    return total / (len(samples) * bandwidth * math.sqrt(2 * math.pi))


def _kde_binned(samples, y, bandwidth):
    """Linear binning on a grid of spacing ``bandwidth/20`` and FFT convolution."""
    dx = bandwidth / 20
    reach = 8 * bandwidth
    lo, hi = y.min() - reach, y.max() + reach
    m = int(math.ceil((hi - lo) / dx)) + 1
    pos = (samples - lo) / dx
    inside = (pos >= 0) & (pos < m - 1)
    pos = pos[inside]
    i = np.floor(pos).astype(np.int64)
    w = pos - i
    counts = np.bincount(i, 1 - w, minlength=m) + np.bincount(i + 1, w, minlength=m)
    half = int(math.ceil(reach / dx))
    z = np.arange(-half, half + 1) * dx / bandwidth
    kern = np.exp(-0.5 * z * z) / (bandwidth * math.sqrt(2 * math.pi))
    dens = signal.fftconvolve(counts, kern, mode="same") / len(samples)
    return np.interp(y, lo + dx * np.arange(m), np.maximum(dens, 0.0))


def kde(samples: np.ndarray, y_grid: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gaussian kernel density estimate of one-dimensional samples.

    Small problems are summed directly; large ones are linearly binned on a
    grid forty times finer than the bandwidth and convolved by FFT, which
    keeps the relative error below about 1e-3.
    """
    if not bandwidth > 0:
        raise DomainError("bandwidth must be > 0")
    samples = np.asarray(samples, dtype=float).reshape(-1)
    samples = samples[np.isfinite(samples)]
    y = np.asarray(y_grid, dtype=float).reshape(-1)
    if len(samples) * len(y) <= 4_000_000:
        return _kde_direct(samples, y, bandwidth)
    return _kde_binned(samples, y, bandwidth)


def empirical_density(
    spec: SdeSpec, t: float, x, n: int, bandwidth: float, y_grid, h: float, seed: int = 0, threads: int | None = None
) -> np.ndarray:
    """Kernel density estimate of the law of ``X_t^x`` on ``y_grid`` (``d = 1``)."""
    if n < 10_000:
        raise DomainError("empirical_density needs n >= 1e4")
    if spec.dimension != 1:
        raise UnsupportedError("empirical densities are implemented for d = 1")
    if not bandwidth > 0:
        raise DomainError("bandwidth must be > 0")
    batch = path_batch(spec, x, t, h, n, seed, threads)
    return kde(batch.values[:, 0], y_grid, bandwidth)


@dataclass(frozen=True)
class LpCriterion:
    sup: float
    sup_doubled: float
    ratio: float
    status: Status
    x_grid: np.ndarray


STABILITY_BAND = (0.8, 1.2)


def local_lp_integrals(spec, t, xs, M, p, n, bandwidth, h, seed, n_y=801, threads=None):
    res = simulate(spec, xs[:, None], t, h, n, seed, threads=threads)
    y = np.linspace(-M, M, n_y)
    out = []
    for k in range(len(xs)):
        col = res.values[-1, :, k, 0]
        q = kde(col[~res.diverged[:, k]], y, bandwidth)
        out.append(float(integrate.trapezoid(q**p, y)))
    return np.array(out)


def local_lp_criterion(
    spec: SdeSpec,
    t: float,
    x0: float,
    gamma: float,
    M: float,
    p: float,
    n: int,
    bandwidth: float,
    h: float,
    seed: int = 0,
    n_x: int = 5,
    threads: int | None = None,
) -> LpCriterion:
    """Empirical ``sup_{|x - x0| <= gamma} int_{|y| <= M} q_t(x, y)**p dy`` and its stability.

    The sup is computed with ``n`` and ``2 n`` paths; the result is
    ``FINITE`` when the two agree within ``STABILITY_BAND`` and
    ``INCONCLUSIVE`` otherwise.
    """
    if not p > 1:
        raise DomainError("p must be > 1")
    if not (gamma > 0 and M > 0):
        raise DomainError("gamma and M must be > 0")
    if spec.dimension != 1:
        raise UnsupportedError("the local L_p criterion is implemented for d = 1")
    xs = np.linspace(x0 - gamma, x0 + gamma, n_x)
    a = float(np.max(local_lp_integrals(spec, t, xs, M, p, n, bandwidth, h, seed, threads=threads)))
    b = float(np.max(local_lp_integrals(spec, t, xs, M, p, 2 * n, bandwidth, h, seed, threads=threads)))
    ratio = b / a if a > 0 else math.nan
    ok = STABILITY_BAND[0] <= ratio <= STABILITY_BAND[1]
    return LpCriterion(a, b, ratio, Status.FINITE if ok else Status.INCONCLUSIVE, xs)


def gaussian_lp_integral(t: float, p: float, d: int = 1) -> float:
    """``int_{R^d} p_t(y)**p dy = (2 pi t)**(-d (p-1)/2) p**(-d/2)``."""
    return (2 * math.pi * t) ** (-d * (p - 1) / 2) * p ** (-d / 2)
