import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levysmooth import streams


def test_generator_is_reproducible():
    a = streams.generator(7, 1, 2).standard_normal(5)
    b = streams.generator(7, 1, 2).standard_normal(5)
    assert np.array_equal(a, b)


def test_distinct_keys_give_distinct_streams():
    a = streams.generator(7, 1, 0).standard_normal(5)
    b = streams.generator(7, 2, 0).standard_normal(5)
    c = streams.generator(8, 1, 0).standard_normal(5)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


@given(st.integers(1, 200_000))
def test_chunk_sizes_sum(n):
    sizes = streams.chunk_sizes(n)
    assert sum(sizes) == n
    assert all(0 < s <= streams.CHUNK_SIZE for s in sizes)


def test_chunk_sizes_rejects_zero():
    with pytest.raises(ValueError):
        streams.chunk_sizes(0)


def test_parallel_map_preserves_order():
    assert streams.parallel_map(lambda i: i * i, list(range(10)), threads=4) == [i * i for i in range(10)]


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 100_000), st.integers(0, 2**31))
def test_chunked_stats_independent_of_threads(n, seed):
    draw = lambda rng, m: rng.standard_normal(m)
    m1, s1 = streams.chunked_stats(draw, n, seed, (1,), threads=1)
    m3, s3 = streams.chunked_stats(draw, n, seed, (1,), threads=3)
    assert m1 == m3 and s1 == s3


def test_chunked_stats_matches_numpy():
    n = 3 * streams.CHUNK_SIZE + 17
    draw = lambda rng, m: rng.exponential(size=m)
    mean, se = streams.chunked_stats(draw, n, 3, (5,), threads=1)
    vals = np.concatenate([streams.generator(3, 5, i).exponential(size=m) for i, m in enumerate(streams.chunk_sizes(n))])
    assert mean == pytest.approx(vals.mean(), rel=1e-12)
    assert se == pytest.approx(vals.std(ddof=1) / np.sqrt(n), rel=1e-9)


def test_default_threads_env(monkeypatch):
    monkeypatch.setenv("LEVYSMOOTH_THREADS", "3")
    assert streams.default_threads() == 3
    monkeypatch.setenv("LEVYSMOOTH_THREADS", "zero")
    with pytest.raises(ValueError):
        streams.default_threads()
