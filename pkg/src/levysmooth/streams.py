"""Reproducible random substreams and chunked parallel evaluation.

Every Monte Carlo routine in the package draws from generators derived
from a master seed plus an integer key.  Work is split into chunks of a
fixed size (independent of the number of worker threads), chunk ``i``
always uses the substream ``(seed, *key, i)``, and partial results are
combined in chunk order.  The outcome therefore depends only on the
seed, the key and the sample count, never on scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

CHUNK_SIZE = 1 << 15

# Stream identifiers used as the first element of a substream key.
STREAM_SUBORDINATOR = 1
STREAM_GAUSSIAN = 2
STREAM_PERTURBATION = 3
STREAM_PATHS = 4
STREAM_MOMENTS = 5

T = TypeVar("T")


def default_threads() -> int:
    env = os.environ.get("LEVYSMOOTH_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"LEVYSMOOTH_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise ValueError("LEVYSMOOTH_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def generator(seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def chunk_sizes(n: int, chunk: int = CHUNK_SIZE) -> list[int]:
    if n < 1:
        raise ValueError("sample count must be >= 1")
    full, rest = divmod(n, chunk)
    return [chunk] * full + ([rest] if rest else [])


def parallel_map(fn: Callable[[T], object], items: Sequence[T], threads: int | None = None) -> list:
    """Map ``fn`` over ``items`` preserving order."""
    threads = threads or default_threads()
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def chunked_stats(
    draw: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    seed: int,
    key: Sequence[int],
    threads: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of ``draw`` over ``n`` samples.

    ``draw(rng, m)`` must return an array whose leading axis has length
    ``m``.  Chunk statistics are merged in chunk order with the pairwise
    update of Chan et al., which stays accurate for heavy-tailed samples.
    """
    sizes = chunk_sizes(n)

    def work(i: int):
        vals = np.asarray(draw(generator(seed, *key, i), sizes[i]), dtype=float)
        mu = vals.mean(axis=0)
        return sizes[i], mu, np.square(vals - mu).sum(axis=0)

    parts = parallel_map(work, list(range(len(sizes))), threads)
    count, mean, m2 = parts[0]
    for nb, mb, m2b in parts[1:]:
        total = count + nb
        delta = mb - mean
        mean = mean + delta * (nb / total)
        m2 = m2 + m2b + delta**2 * (count * nb / total)
        count = total
    if count < 2:
        return mean, np.full_like(np.asarray(mean, dtype=float), np.inf)
    return mean, np.sqrt(m2 / (count - 1) / count)
