import math

import numpy as np
import pytest

from gdcn.crossnet import sigmoid, stack_forward
from gdcn.embedding import lookup_concat
from gdcn.errors import ConfigError, NumericError
from gdcn.model import (
    MlpParams, Topology, Variant, build_model, count_parameters, dense_gradients, forward,
    init_mlp, logloss, mlp_backward, mlp_forward,
)

SIZES = [5, 7, 3, 4]
DIMS = [2, 3, 1, 2]


def randomize(model, seed=0, scale=0.5):
    """Nonzero biases keep ReLU inputs away from their kink."""
    rng = np.random.default_rng(seed)
    for name, p in model.params.items():
        p[...] = rng.normal(scale=scale, size=p.shape) / math.sqrt(max(p.shape[-1], 1))
        if name.endswith(".b"):
            p[...] = rng.normal(scale=0.3, size=p.shape)
    return model


def batch(model, n=8, seed=1):
    rng = np.random.default_rng(seed)
    idx = np.stack([rng.integers(0, s, n) for s in model.field_sizes], axis=1)
    return idx, rng.integers(0, 2, n).astype(float)


def test_mlp_zero_and_no_dropout():
    p = MlpParams([np.zeros((3, 4)), np.zeros((2, 3))], [np.zeros(3), np.zeros(2)], 0.5)
    out, _ = mlp_forward(np.ones(4), p)
    assert np.array_equal(out, np.zeros(2))
    q = init_mlp(4, (6, 5), dropout_rate=0.0, seed=1)
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(mlp_forward(x, q, training=True, seed=1)[0], mlp_forward(x, q)[0])


def test_dropout_is_inverted_and_reproducible():
    p = init_mlp(10, (400,), dropout_rate=0.5, seed=0)
    p.biases[0][:] = 1.0
    p.weights[0][:] = 0.0
    x = np.ones((50, 10))
    out, cache = mlp_forward(x, p, training=True, seed=3, step=7)
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert 0.4 < (out > 0).mean() < 0.6
    again, _ = mlp_forward(x, p, training=True, seed=3, step=7)
    other, _ = mlp_forward(x, p, training=True, seed=3, step=8)
    assert np.array_equal(out, again) and not np.array_equal(out, other)
    assert np.array_equal(mlp_forward(x, p)[0], np.ones((50, 400)))


def test_single_layer_weight_gradient_is_outer_product():
    W = np.array([[1.0, 2.0], [0.5, -0.1]])
    b = np.array([3.0, 4.0])  # keeps both units active
    p = MlpParams([W], [b], 0.0)
    h0 = np.array([0.3, 0.7])
    g_out = np.array([1.5, -2.0])
    _, cache = mlp_forward(h0, p)
    g_in, grads = mlp_backward(cache, p, g_out)
    np.testing.assert_allclose(grads[0][0], np.outer(g_out, h0))
    np.testing.assert_allclose(grads[0][1], g_out)
    np.testing.assert_allclose(g_in, W.T @ g_out)
    g0, grads0 = mlp_backward(cache, p, np.zeros(2))
    assert not g0.any() and not grads0[0][0].any()


def test_mlp_finite_differences_with_frozen_mask():
    rng = np.random.default_rng(2)
    p = init_mlp(8, (4, 3), dropout_rate=0.5, seed=2)
    for b in p.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    x = rng.normal(size=(5, 8))
    G = rng.normal(size=(5, 3))
    _, cache = mlp_forward(x, p, training=True, seed=4, step=1)
    masks = cache.masks
    g_in, grads = mlp_backward(cache, p, G)

    def loss():
        return float(np.sum(G * mlp_forward(x, p, masks=masks)[0]))

    for arr, analytic in [(x, g_in)] + [(w, g[0]) for w, g in zip(p.weights, grads)] + \
            [(b, g[1]) for b, g in zip(p.biases, grads)]:
        num = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + 1e-6
            up = loss()
            arr[i] = old - 1e-6
            down = loss()
            arr[i] = old
            num[i] = (up - down) / 2e-6
        assert np.max(np.abs(num - analytic)) <= 1e-4 * max(np.max(np.abs(num)), 1e-8)


def test_logloss_anchors():
    for y in (0, 1):
        loss, grad = logloss(0.5, y)
        assert loss == pytest.approx(math.log(2), abs=1e-12)
        assert grad == 0.5 - y
    assert logloss(1.0, 1)[0] < 1e-14
    assert logloss(0.0, 0)[0] < 1e-14
    labels = np.array([1.0] * 33 + [0.0] * 67)
    mean, _ = logloss(np.full(100, 0.33), labels)
    expect = -(0.33 * math.log(0.33) + 0.67 * math.log(0.67))
    assert mean == pytest.approx(expect, abs=1e-12)
    third = -(math.log(1 / 3) / 3 + 2 * math.log(2 / 3) / 3)
    assert third == pytest.approx(0.6365, abs=1e-4)
    with pytest.raises(NumericError):
        logloss(np.array([0.5, np.nan]), np.array([0.0, 1.0]))
    with pytest.raises(NumericError):
        logloss(1.5, 1)


@pytest.mark.parametrize("variant", list(Variant))
def test_zero_head_gives_one_half(variant):
    m = build_model(SIZES, DIMS, Topology(variant, 2, (6,)), seed=0)
    m.params["head.w"][:] = 0
    idx, _ = batch(m)
    assert np.all(m.forward(idx).prob == 0.5)


def test_degenerate_parallel_model():
    m = randomize(build_model(SIZES, DIMS, Topology("gdcn-p", 0, ()), seed=0))
    idx, _ = batch(m)
    c0 = lookup_concat(idx, m.tables)
    want = sigmoid(np.concatenate([c0, c0], axis=1) @ m.params["head.w"])
    np.testing.assert_array_equal(m.forward(idx).prob, want)


@pytest.mark.parametrize("variant", list(Variant))
def test_forward_matches_hand_composition(variant):
    m = randomize(build_model(SIZES, DIMS, Topology(variant, 2, (6, 4)), seed=3), seed=3)
    idx, _ = batch(m, n=1)
    p, trace = forward(idx[0], m)
    c0 = lookup_concat(idx[0], m.tables)
    c_cross = stack_forward(c0, m.cross)[0]
    if variant is Variant.GCN:
        final = c_cross
    elif variant is Variant.STACKED:
        final = mlp_forward(c_cross, m.mlp)[0]
    else:
        final = np.concatenate([c_cross, mlp_forward(c0, m.mlp)[0]])
    assert p == pytest.approx(float(sigmoid(final @ m.params["head.w"])), abs=1e-15)
    assert len(trace.gates) == 2


def test_stacked_without_dnn_equals_gcn():
    gcn = randomize(build_model(SIZES, DIMS, Topology("gcn", 3, ()), seed=1), seed=1)
    stacked = build_model(SIZES, DIMS, Topology("gdcn-s", 3, ()), seed=9)
    for k in stacked.params:
        stacked.params[k][...] = gcn.params[k]
    idx, _ = batch(gcn, n=16)
    np.testing.assert_array_equal(gcn.forward(idx).prob, stacked.forward(idx).prob)


def test_head_widths():
    D = sum(DIMS)
    assert build_model(SIZES, DIMS, Topology("gcn", 2, (6, 4))).head_width == D
    assert build_model(SIZES, DIMS, Topology("gdcn-s", 2, (6, 4))).head_width == 4
    assert build_model(SIZES, DIMS, Topology("gdcn-p", 2, (6, 4))).head_width == D + 4


def test_probability_range_with_extreme_logits():
    m = build_model(SIZES, DIMS, Topology("gcn", 1, ()), seed=0)
    m.params["head.w"][:] = 1e6
    idx, y = batch(m)
    p = m.forward(idx).prob
    assert np.all((p > 0) & (p < 1))
    loss, _ = m.backward(m.forward(idx), y)
    assert np.isfinite(loss)


def test_topology_validation():
    with pytest.raises(ConfigError):
        Topology("bogus")
    with pytest.raises(ConfigError):
        Topology("gcn", -1)
    with pytest.raises(ConfigError):
        build_model(SIZES, DIMS[:2])


def _check_all_gradients(model, idx, y, tol=1e-4, h=1e-6):
    trace = model.forward(idx, training=True, seed=11, step=3)
    masks = trace.mlp_cache.masks if trace.mlp_cache else None
    _, grads = model.backward(trace, y)
    grads = dense_gradients(model, grads)
    worst = {}
    for name, p in model.params.items():
        num = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            up = logloss(model.forward(idx, masks=masks).prob, y)[0]
            p[i] = old - h
            down = logloss(model.forward(idx, masks=masks).prob, y)[0]
            p[i] = old
            num[i] = (up - down) / (2 * h)
        worst[name] = np.max(np.abs(num - grads[name])) / max(np.max(np.abs(num)), 1e-10)
    return worst


@pytest.mark.parametrize("align", [False, True])
@pytest.mark.parametrize("gate", ["learned", "all_ones"])
@pytest.mark.parametrize("variant", list(Variant))
def test_end_to_end_gradients(variant, gate, align):
    m = randomize(build_model(SIZES, DIMS, Topology(variant, 2, (6, 4), gate, 0.5, align),
                              seed=4), seed=4)
    idx, y = batch(m)
    worst = _check_all_gradients(m, idx, y)
    assert max(worst.values()) <= 1e-4, worst


def test_parameter_count_of_reference_models():
    """GCN with three cross layers on the 39-field Criteo vocabulary."""
    from gdcn_reference import CRITEO_DIMS_95, CRITEO_SIZES
    topo = Topology("gcn", 3, ())
    full = count_parameters(CRITEO_SIZES, [16] * 39, topo)
    small = count_parameters(CRITEO_SIZES, CRITEO_DIMS_95, topo)
    assert round(full / 1e6, 2) == 19.73
    assert round(small / 1e6, 2) == 7.00
    assert round(100 * small / full, 1) == 35.5
