import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import REL_TOL, check, check_input
from sdwnroute.numcore import (MLP, Adam, Dense, DimensionError, GRUCell, GraphConv, NumericError, Param,
                               StateError, clip_gradients, global_norm, log_softmax, sigmoid, softmax,
                               zero_grad)
from sdwnroute.predictor import normalize_adjacency

SEEDS = range(20)


def _random_adj(rng, n):
    a = (rng.random((n, n)) < 0.4).astype(float)
    a = np.triu(a, 1)
    a = a + a.T
    for i in range(n - 1):  # keep it connected
        a[i, i + 1] = a[i + 1, i] = 1.0
    return a


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("act", ["identity", "tanh", "sigmoid"])
def test_dense_gradients(seed, act):
    rng = np.random.default_rng(seed)
    layer = Dense(5, 4, act, rng=rng)
    x = rng.normal(size=(3, 5))
    w = rng.normal(size=(3, 4))

    def loss():
        return float(np.sum(w * layer.forward(x))) if not layer.clear_cache() else 0.0

    zero_grad(layer.params())
    layer.forward(x)
    dx = layer.backward(w)
    assert check(loss, layer.params(), rng) <= REL_TOL
    assert check_input(loss, x, dx, rng) <= REL_TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_graphconv_gradients(seed):
    rng = np.random.default_rng(seed)
    n = 6
    layer = GraphConv(4, 3, rng=rng)
    adj = normalize_adjacency(_random_adj(rng, n))
    x = rng.normal(size=(2, n, 4))
    w = rng.normal(size=(2, n, 3))

    def loss():
        y = layer.forward(x, adj)
        layer.clear_cache()
        return float(np.sum(w * y))

    zero_grad(layer.params())
    layer.forward(x, adj)
    dx = layer.backward(w)
    assert check(loss, layer.params(), rng) <= REL_TOL
    assert check_input(loss, x, dx, rng) <= REL_TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gru_gradients(seed):
    rng = np.random.default_rng(seed)
    cell = GRUCell(4, 5, rng=rng)
    x = rng.normal(size=(3, 4))
    h = rng.normal(size=(3, 5)) * 0.5
    w = rng.normal(size=(3, 5))

    def loss():
        y = cell.forward(x, h)
        cell.clear_cache()
        return float(np.sum(w * y))

    zero_grad(cell.params())
    cell.forward(x, h)
    dx, dh = cell.backward(w)
    assert check(loss, cell.params(), rng) <= REL_TOL
    assert check_input(loss, x, dx, rng) <= REL_TOL
    assert check_input(loss, h, dh, rng) <= REL_TOL


def test_gru_unrolled_gradients():
    rng = np.random.default_rng(7)
    cell = GRUCell(3, 4, rng=rng)
    xs = rng.normal(size=(4, 2, 3))
    w = rng.normal(size=(2, 4))

    def run():
        h = np.zeros((2, 4))
        for x in xs:
            h = cell.forward(x, h)
        return h

    def loss():
        y = run()
        cell.clear_cache()
        return float(np.sum(w * y))

    zero_grad(cell.params())
    run()
    dh = w
    for _ in xs:
        _, dh = cell.backward(dh)
    assert check(loss, cell.params(), rng) <= REL_TOL


def test_mlp_call_matches_forward():
    rng = np.random.default_rng(0)
    net = MLP([6, 8, 8, 3], rng=rng)
    x = rng.normal(size=(4, 6))
    np.testing.assert_array_equal(net(x), net.forward(x))
    net.clear_cache()


def test_softmax_basic():
    p = softmax(np.array([1000.0, 1000.0, -1000.0]))
    np.testing.assert_allclose(p, [0.5, 0.5, 0.0], atol=1e-12)
    np.testing.assert_allclose(np.exp(log_softmax(np.array([1.0, 2.0]))), softmax(np.array([1.0, 2.0])))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 12), elements=st.floats(-50, 50)))
def test_softmax_is_a_distribution(z):
    p = softmax(z)
    assert abs(p.sum() - 1.0) <= 1e-9
    assert np.all(p >= 0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 10), elements=st.floats(-700, 700)))
def test_sigmoid_bounded_and_stable(x):
    s = sigmoid(x)
    assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))
    np.testing.assert_allclose(s + sigmoid(-x), 1.0, atol=1e-12)


def test_shape_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionError):
        Dense(3, 2, rng=rng).forward(np.ones((2, 4)))
    with pytest.raises(DimensionError):
        GraphConv(3, 2, rng=rng).forward(np.ones((4, 3)), np.ones((4, 5)))
    with pytest.raises(DimensionError):
        GRUCell(3, 2, rng=rng).forward(np.ones((1, 3)), np.ones((1, 3)))


def test_backward_without_forward():
    with pytest.raises(StateError):
        Dense(2, 2).backward(np.ones((1, 2)))


def test_adam_rejects_nonfinite_gradient():
    a, b = Param(np.ones(2), "a"), Param(np.ones(3), "b")
    b.grad[1] = np.nan
    opt = Adam([a, b])
    with pytest.raises(NumericError) as info:
        opt.step()
    assert info.value.layer_index == 1
    np.testing.assert_array_equal(a.value, 1.0)  # nothing applied


def test_adam_minimises_quadratic():
    p = Param(np.array([3.0, -2.0]))
    opt = Adam([p], lr=0.1)
    for _ in range(500):
        p.grad[...] = 2 * p.value
        opt.step()
    assert np.abs(p.value).max() < 1e-2


def test_adam_zero_gradient_is_a_no_op():
    p = Param(np.array([1.5, -0.5]))
    opt = Adam([p], lr=0.1)
    for _ in range(3):
        opt.step()
    np.testing.assert_array_equal(p.value, [1.5, -0.5])


def test_clip_gradients():
    a, b = Param(np.zeros(2)), Param(np.zeros(1))
    a.grad[...] = [3.0, 0.0]
    b.grad[...] = [4.0]
    assert clip_gradients([a, b], 1.0) == pytest.approx(5.0)
    assert global_norm([a.grad, b.grad]) == pytest.approx(1.0)
    assert clip_gradients([a, b], 10.0) == pytest.approx(1.0)  # untouched below the cap
