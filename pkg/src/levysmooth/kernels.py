"""Gaussian heat kernels, Hermite polynomials and their Frechet derivatives.

The heat kernel is ``p_t(x) = (2 pi t)**(-d/2) exp(-|x|**2 / (2 t))``, the
density of ``W_t`` for a standard Brownian motion.  With a covariance ``Q``
it becomes ``p_t^Q(x) = det(Q)**(-1/2) p_t(Q**(-1/2) x)``.

Hermite polynomials use the probabilists' normalisation
``H_n(y) = (-1)**n exp(y**2/2) d^n/dy^n exp(-y**2/2)`` so that
``d^n/dy^n p_1(y) = (-1)**n H_n(y) p_1(y)``.

The n-th Frechet derivative of ``p_t`` is the symmetric n-linear form

    D^n p_t(x)(h_1, ..., h_n) = (-1)**n t**(-n/2) p_t(x) Htilde_n(t**(-1/2) x)(h),

where ``Htilde_n(x)(h)`` sums, over all ways of splitting ``{1..n}`` into
singletons and unordered pairs, the products of ``<x, h_i>`` over the
singletons and ``<h_i, h_j>`` over the pairs, each term carrying the sign
``(-1)**(number of pairs)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Sequence

import numpy as np

from .errors import DomainError, UnsupportedError

Partition = tuple[tuple[int, ...], tuple[tuple[int, int], ...]]


@dataclass(frozen=True)
class MultiIndex:
    entries: tuple[int, ...]

    def __post_init__(self):
        entries = tuple(int(a) for a in self.entries)
        if not entries:
            raise DomainError("multi-index needs at least one entry")
        if any(a < 0 for a in entries):
            raise DomainError(f"multi-index entries must be >= 0, got {entries}")
        object.__setattr__(self, "entries", entries)

    @property
    def order(self) -> int:
        return sum(self.entries)

    @property
    def dimension(self) -> int:
        return len(self.entries)


def _as_multi_index(alpha) -> MultiIndex:
    return alpha if isinstance(alpha, MultiIndex) else MultiIndex(tuple(alpha))


@dataclass(frozen=True)
class HeatKernelSpec:
    """Dimension and (optional) covariance of the driving Brownian motion."""

    dimension: int
    covariance: np.ndarray | None = None
    _chol: np.ndarray = field(init=False, repr=False, compare=False)
    _precision: np.ndarray = field(init=False, repr=False, compare=False)
    _logdet: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = int(self.dimension)
        if d < 1:
            raise DomainError("dimension must be >= 1")
        object.__setattr__(self, "dimension", d)
        if self.covariance is None:
            q = np.eye(d)
        else:
            q = np.array(self.covariance, dtype=float)
            if q.shape != (d, d):
                raise DomainError(f"covariance must be {d}x{d}, got shape {q.shape}")
            if not np.allclose(q, q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(q).max())):
                raise DomainError("covariance must be symmetric")
            q.setflags(write=False)
            object.__setattr__(self, "covariance", q)
        try:
            chol = np.linalg.cholesky(q)
        except np.linalg.LinAlgError:
            raise DomainError("covariance must be positive definite") from None
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_precision", np.linalg.inv(q))
        object.__setattr__(self, "_logdet", 2.0 * float(np.sum(np.log(np.diag(chol)))))

    @property
    def isotropic(self) -> bool:
        return self.covariance is None or bool(np.array_equal(self.covariance, np.eye(self.dimension)))

    @property
    def cholesky(self) -> np.ndarray:
        return self._chol

    @property
    def precision(self) -> np.ndarray:
        return self._precision


def _points(spec: HeatKernelSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if spec.dimension == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != spec.dimension:
        raise DomainError(f"points must have trailing dimension {spec.dimension}, got {x.shape}")
    return x


def _check_time(t: float) -> None:
    if not t > 0:
        raise DomainError(f"t must be > 0, got {t}")


def _scalar(out: np.ndarray):
    return float(out) if np.ndim(out) == 0 else out


# ----------------------------------------------------------------------------
# Hermite polynomials
# ----------------------------------------------------------------------------


def hermite_eval(n: int, y):
    """``H_n(y)`` via ``H_{n+1} = y H_n - n H_{n-1}``."""
    if n < 0:
        raise DomainError("Hermite order must be >= 0")
    y = np.asarray(y, dtype=float)
    prev, cur = np.zeros_like(y), np.ones_like(y)
    for k in range(n):
        prev, cur = cur, y * cur - k * prev
    return _scalar(cur)


def hermite_coefficient(n: int, m: int) -> int:
    """Coefficient of ``y**m`` in ``H_n``; zero unless ``n - m`` is even."""
    if m < 0 or m > n or (n - m) % 2:
        return 0
    j = (n - m) // 2
    return (-1) ** j * math.factorial(n) // (math.factorial(m) * 2**j * math.factorial(j))


@lru_cache(maxsize=None)
def partitions(n: int, m: int) -> tuple[Partition, ...]:
    """Splittings of ``{0..n-1}`` into ``m`` singletons and unordered pairs.

    Each element is ``(singletons, pairs)``.  The first remaining element
    either stands alone or pairs with a later one, which enumerates every
    splitting exactly once.
    """
    if m < 0 or m > n or (n - m) % 2:
        return ()

    def rec(items: tuple[int, ...], m_left: int):
        if not items:
            if m_left == 0:
                yield (), ()
            return
        first, rest = items[0], items[1:]
        if m_left > 0:
            for singles, pairs in rec(rest, m_left - 1):
                yield (first,) + singles, pairs
        for pos, other in enumerate(rest):
            remaining = rest[:pos] + rest[pos + 1 :]
            for singles, pairs in rec(remaining, m_left):
                yield singles, ((first, other),) + pairs

    return tuple(rec(tuple(range(n)), m))


def hermite_tensor_apply(n: int, x, h, metric=None):
    """Evaluate ``Htilde_n(x)(h_1, ..., h_n)``.

    ``x`` has shape ``(..., d)`` and ``h`` shape ``(..., n, d)`` (leading
    axes broadcast), so batches of directions are evaluated at once.  With
    ``metric`` ``M`` every inner product becomes ``<u, M v>``.
    """
    if n < 0:
        raise DomainError("order must be >= 0")
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    if h.ndim < 2 or h.shape[-2] != n:
        raise DomainError(f"expected {n} direction vectors, got array of shape {h.shape}")
    if h.shape[-1] != x.shape[-1]:
        raise DomainError("directions and point must have the same dimension")
    if metric is not None:
        mh = np.einsum("ij,...kj->...ki", np.asarray(metric, dtype=float), h)
    else:
        mh = h
    xh = np.einsum("...j,...kj->...k", x, mh)
    gram = np.einsum("...ij,...kj->...ik", h, mh)
    shape = np.broadcast_shapes(xh.shape[:-1], gram.shape[:-2])
    total = np.zeros(shape)
    for m in range(n, -1, -2):
        sign = (-1) ** ((n - m) // 2)
        for singles, pairs in partitions(n, m):
            term = np.ones(shape)
            for i in singles:
                term = term * xh[..., i]
            for i, j in pairs:
                term = term * gram[..., i, j]
            total = total + sign * term
    return _scalar(total)


# ----------------------------------------------------------------------------
# Heat kernel and its derivatives
# ----------------------------------------------------------------------------


def _log_heat_kernel(spec: HeatKernelSpec, t: float, x: np.ndarray) -> np.ndarray:
    d = spec.dimension
    if spec.isotropic:
        quad = np.sum(x * x, axis=-1)
    else:
        quad = np.einsum("...i,ij,...j->...", x, spec.precision, x)
    return -0.5 * d * math.log(2 * math.pi * t) - 0.5 * spec._logdet - quad / (2 * t)


def heat_kernel(spec: HeatKernelSpec, t: float, x):
    """``p_t^Q(x)``; ``x`` has shape ``(..., d)`` (or any shape when ``d = 1``)."""
    _check_time(t)
    x = _points(spec, x)
    return _scalar(np.exp(_log_heat_kernel(spec, t, x)))


def heat_kernel_partial(spec: HeatKernelSpec, t: float, x, alpha):
    """``d^alpha p_t(x) = (-1)**|alpha| t**(-|alpha|/2) p_t(x) prod_k H_{alpha_k}(x_k / sqrt t)``."""
    _check_time(t)
    alpha = _as_multi_index(alpha)
    if not spec.isotropic:
        raise UnsupportedError("coordinate partials are only available for Q = I")
    if alpha.dimension != spec.dimension:
        raise DomainError(f"multi-index has length {alpha.dimension}, expected {spec.dimension}")
    x = _points(spec, x)
    y = x / math.sqrt(t)
    herm = np.ones(x.shape[:-1])
    for k, a in enumerate(alpha.entries):
        if a:
            herm = herm * hermite_eval(a, y[..., k])
    n = alpha.order
    out = (-1) ** n * t ** (-n / 2) * np.exp(_log_heat_kernel(spec, t, x)) * herm
    return _scalar(out)


def frechet_derivative(spec: HeatKernelSpec, t: float, x, n: int, h):
    """``D^n p_t^Q(x)(h_1, ..., h_n)``.

    For a covariance ``Q`` the tensor is evaluated in the ``Q**-1`` inner
    product, which is the chain rule applied to ``p_t(Q**(-1/2) x)``.
    """
    _check_time(t)
    x = _points(spec, x)
    h = np.asarray(h, dtype=float)
    if spec.dimension == 1 and (h.ndim < 2 or h.shape[-1] != 1):
        h = h[..., None]
    metric = None if spec.isotropic else spec.precision
    herm = hermite_tensor_apply(n, x / math.sqrt(t), h, metric)
    out = (-1) ** n * t ** (-n / 2) * np.exp(_log_heat_kernel(spec, t, x)) * herm
    return _scalar(out)


def derivative_tensor(spec: HeatKernelSpec, t: float, x, n: int) -> np.ndarray:
    """Array ``D^n p_t(x)[..., i_1, ..., i_n]`` of shape ``x.shape[:-1] + (d,)*n``."""
    x = _points(spec, x)
    d = spec.dimension
    if n == 0:
        return np.asarray(heat_kernel(spec, t, x))
    idx = np.array(list(product(range(d), repeat=n)))
    h = np.eye(d)[idx]  # (d**n, n, d)
    vals = frechet_derivative(spec, t, x[..., None, :], n, h)
    return np.asarray(vals).reshape(x.shape[:-1] + (d,) * n)


def frechet_norm_bound(spec: HeatKernelSpec, t: float, x, k: int):
    """Envelope ``(t**-k |x|**k + t**(-k/2)) p_t(x)`` for ``||D^k p_t(x)||``."""
    _check_time(t)
    if k < 1:
        raise DomainError("k must be >= 1")
    x = _points(spec, x)
    r = np.sqrt(np.sum(x * x, axis=-1))
    out = (t ** (-k) * r**k + t ** (-k / 2)) * np.exp(_log_heat_kernel(spec, t, x))
    return _scalar(out)


def _apply_symmetric(tensor: np.ndarray, u: np.ndarray, times: int) -> np.ndarray:
    out = tensor
    for _ in range(times):
        out = out @ u
    return out


def tensor_operator_norm(
    tensor: np.ndarray,
    rng: np.random.Generator | None = None,
    n_draws: int = 1000,
    extra_directions: Sequence[np.ndarray] = (),
) -> tuple[float, bool]:
    """Operator norm ``sup |T(h_1, ..., h_k)|`` over Euclidean unit vectors.

    Returns ``(value, exact)``.  Orders 1 and 2 are exact (vector norm,
    spectral norm).  For higher orders the value is a lower bound: the best
    of ``n_draws`` random unit tuples, the coordinate tuples, the repeated
    ``extra_directions``, and a short higher-order power iteration started
    from the best repeated direction.
    """
    tensor = np.asarray(tensor, dtype=float)
    k = tensor.ndim
    if k == 0:
        return abs(float(tensor)), True
    if k == 1:
        return float(np.linalg.norm(tensor)), True
    if k == 2:
        sym = 0.5 * (tensor + tensor.T)
        return float(np.max(np.abs(np.linalg.eigvalsh(sym)))), True
    d = tensor.shape[0]
    rng = rng if rng is not None else np.random.default_rng(0)
    best = float(np.max(np.abs(tensor)))  # coordinate tuples
    h = rng.standard_normal((n_draws, k, d))
    h /= np.linalg.norm(h, axis=-1, keepdims=True)
    letters = "abcdefgh"[:k]
    expr = letters + "," + ",".join(f"n{c}" for c in letters) + "->n"
    vals = np.einsum(expr, tensor, *(h[:, i, :] for i in range(k)))
    best = max(best, float(np.max(np.abs(vals))))
    # repeated directions u..u, sufficient for symmetric tensors
    cands = [h[i, 0] for i in range(min(n_draws, 200))] + [np.asarray(e, float) for e in extra_directions]
    start, start_val = None, -1.0
    for u in cands:
        nu = np.linalg.norm(u)
        if nu == 0:
            continue
        u = u / nu
        v = abs(float(_apply_symmetric(tensor, u, k)))
        if v > start_val:
            start, start_val = u, v
    best = max(best, start_val)
    u = start
    for _ in range(50):
        g = _apply_symmetric(tensor, u, k - 1)
        ng = np.linalg.norm(g)
        if ng == 0:
            break
        u = g / ng
        best = max(best, abs(float(_apply_symmetric(tensor, u, k))))
    return best, False


def frechet_operator_norm(spec: HeatKernelSpec, t: float, x, k: int, rng=None, n_draws: int = 1000):
    """``||D^k p_t(x)||`` (exact for ``k <= 2``, a lower bound otherwise)."""
    x1 = _points(spec, x).reshape(spec.dimension)
    tensor = derivative_tensor(spec, t, x1, k)
    return tensor_operator_norm(tensor, rng, n_draws, extra_directions=[x1])
