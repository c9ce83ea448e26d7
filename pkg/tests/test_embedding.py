import numpy as np
import pytest
from hypothesis import given, strategies as st

from gdcn.embedding import (
    EmbeddingTables, align, align_param_count, init_alignment, init_tables, lookup_concat,
    scatter_gradient,
)
from gdcn.errors import ConfigError, EmbeddingLookupError, ShapeError


def test_uniform_dims_width():
    tables = init_tables([3] * 39, [16] * 39, seed=0)
    assert tables.D == 624


def test_init_is_deterministic_and_bounded():
    a = init_tables([50, 7], [4, 9], seed=5)
    b = init_tables([50, 7], [4, 9], seed=5)
    c = init_tables([50, 7], [4, 9], seed=6)
    for x, y, z, d in zip(a.tables, b.tables, c.tables, (4, 9)):
        assert np.array_equal(x, y)
        assert not np.array_equal(x, z)
        assert np.abs(x).max() <= 1 / np.sqrt(d)
    with pytest.raises(ConfigError):
        init_tables([50, 7], [4])
    with pytest.raises(ConfigError):
        init_tables([50, 7], [4, 0])


def test_lookup_concat_hand_case():
    t = EmbeddingTables([np.array([[0.0, 0.0], [1.0, 2.0]]), np.array([[3.0, 4.0, 5.0]])])
    assert np.array_equal(lookup_concat([1, 0], t), [1, 2, 3, 4, 5])
    zero = EmbeddingTables([np.zeros((2, 2)), np.zeros((1, 3))])
    assert np.array_equal(lookup_concat([1, 0], zero), np.zeros(5))


def test_lookup_matches_naive_loop():
    rng = np.random.default_rng(1)
    sizes, dims = [5, 8, 3, 11], [2, 5, 1, 3]
    t = init_tables(sizes, dims, seed=1)
    idx = np.stack([rng.integers(0, s, 20) for s in sizes], axis=1)
    got = lookup_concat(idx, t)
    assert got.shape == (20, sum(dims))
    for b in range(20):
        expect = []
        for f in range(len(sizes)):
            expect.extend(t.tables[f][idx[b, f]])
        assert np.array_equal(got[b], expect)


def test_lookup_out_of_range_names_field():
    t = EmbeddingTables([np.zeros((2, 2)), np.zeros((3, 1))], ["user", "item"])
    with pytest.raises(EmbeddingLookupError, match="item"):
        lookup_concat([0, 3], t)


def test_align_cases():
    assert np.array_equal(align([1.0, 2.0], [[1, 0, 1], [0, 1, 1]]), [1, 2, 3])
    assert np.array_equal(align([0.0, 0.0], [[1, 0, 1], [0, 1, 1]]), [0, 0, 0])
    e = np.array([0.3, -1.2, 4.0])
    assert np.array_equal(align(e, np.eye(3)), e)
    with pytest.raises(ShapeError):
        align([1.0, 2.0], np.eye(3))


def test_alignment_parameter_count():
    dims = [5, 13, 7, 4]
    layer = init_alignment(dims, seed=0)
    assert layer.param_count() == align_param_count(dims) == sum(13 * d for d in dims)
    assert layer.param_count() <= len(dims) * 13 ** 2
    # F=39 fields at most 16 wide
    assert align_param_count([16] * 39) == 9984


def test_scatter_zero_and_shared_rows():
    acc = [np.zeros((3, 2)), np.zeros((2, 1))]
    scatter_gradient([[0, 1], [2, 1]], np.zeros((2, 3)), acc)
    assert all(not a.any() for a in acc)
    g = np.array([[1.0, 2.0, 3.0], [10.0, 20.0, 30.0]])
    scatter_gradient([[0, 1], [0, 1]], g, acc)
    assert np.array_equal(acc[0], [[11, 22], [0, 0], [0, 0]])
    assert np.array_equal(acc[1], [[0], [33]])


@given(st.integers(0, 10_000))
def test_scatter_is_linear(seed):
    rng = np.random.default_rng(seed)
    idx = np.stack([rng.integers(0, 4, 6), rng.integers(0, 3, 6)], axis=1)
    a, b = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
    one = [np.zeros((4, 2)), np.zeros((3, 3))]
    two = [np.zeros((4, 2)), np.zeros((3, 3))]
    scatter_gradient(idx, a + b, one)
    scatter_gradient(idx, a, two)
    scatter_gradient(idx, b, two)
    for x, y in zip(one, two):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)


def test_scatter_matches_finite_difference_jacobian():
    """Embedding gradient of L = sum(G * c0) equals scattered G."""
    rng = np.random.default_rng(7)
    sizes, dims = [6, 4, 5], [2, 3, 2]
    t = init_tables(sizes, dims, seed=2)
    idx = np.stack([rng.integers(0, s, 8) for s in sizes], axis=1)
    G = rng.normal(size=(8, sum(dims)))

    def loss():
        return float(np.sum(G * lookup_concat(idx, t)))

    acc = [np.zeros_like(x) for x in t.tables]
    scatter_gradient(idx, G, acc)
    h = 1e-4
    for f, table in enumerate(t.tables):
        num = np.zeros_like(table)
        for i in range(table.shape[0]):
            for j in range(table.shape[1]):
                old = table[i, j]
                table[i, j] = old + h
                up = loss()
                table[i, j] = old - h
                down = loss()
                table[i, j] = old
                num[i, j] = (up - down) / (2 * h)
        np.testing.assert_allclose(acc[f], num, rtol=1e-4, atol=1e-9)
        untouched = np.setdiff1d(np.arange(table.shape[0]), idx[:, f])
        assert not acc[f][untouched].any()
