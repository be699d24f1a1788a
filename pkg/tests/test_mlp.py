import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airsense.errors import DomainError
from airsense.mlp import QNetwork, layer_sizes, mlp_forward, mlp_train_batch

from . import oracles


def _flat_grad(net, X, y):
    _, gw, gb = net.gradients(X, y)
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(gw, gb)])


def _relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def test_layer_sizes():
    assert layer_sizes(6, 4) == [29, 28, 24, 18, 12, 6, 1]
    assert layer_sizes(8, 3)[0] == 5 * 3 + 8 + 3


def test_invalid_sizes():
    with pytest.raises(DomainError):
        QNetwork([3, 2])
    with pytest.raises(DomainError):
        QNetwork([3])
    with pytest.raises(DomainError):
        QNetwork([3, 2, 1], weights=[np.zeros((3, 2)), np.zeros((2, 2))], biases=[np.zeros(2), np.zeros(1)])


def test_forward_hand_value():
    net = QNetwork([2, 2, 1], weights=[np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([[1.0], [-1.0]])],
                   biases=[np.array([0.0, 0.5]), np.array([0.25])])
    x = np.array([0.3, -0.1])
    expected = np.tanh(0.3) - np.tanh(-0.2 + 0.5) + 0.25
    assert mlp_forward(net, x) == pytest.approx(expected, rel=1e-14)
    assert net.forward(np.stack([x, x])) == pytest.approx([expected] * 2)
    with pytest.raises(DomainError):
        mlp_forward(net, np.zeros((2, 2)))
    with pytest.raises(DomainError):
        net.forward(np.zeros(3))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_backprop_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    sizes = [int(rng.integers(1, 6)) for _ in range(int(rng.integers(1, 4)))]
    net = QNetwork([int(rng.integers(1, 6)), *sizes, 1], seed=seed)
    n = int(rng.integers(1, 8))
    X = rng.normal(size=(n, net.n_inputs))
    y = rng.normal(size=n)
    theta0 = net.get_flat()

    def loss(theta):
        net.set_flat(np.asarray(theta))
        return net.mse(X, y)

    numeric = oracles.numeric_gradient(loss, theta0)
    net.set_flat(theta0)
    assert _relative_error(_flat_grad(net, X, y), numeric) < 1e-6


def test_flat_round_trip():
    net = QNetwork([4, 3, 1], seed=1)
    theta = net.get_flat()
    assert theta.size == net.n_params == 4 * 3 + 3 + 3 + 1
    net.set_flat(theta * 2)
    assert np.array_equal(net.get_flat(), theta * 2)
    with pytest.raises(DomainError):
        net.set_flat(theta[:-1])


def test_normalize_clips_and_handles_constant_columns():
    net = QNetwork([3, 2, 1])
    net.input_lo = np.array([0.0, 10.0, 5.0])
    net.input_hi = np.array([2.0, 20.0, 5.0])
    out = net.normalize([1.0, 25.0, 7.0])
    assert out.tolist() == [0.5, 1.0, 1.0]
    assert net.normalize([-1.0, 10.0, 5.0]).tolist() == [0.0, 0.0, 0.0]


def test_dict_round_trip_is_exact():
    net = QNetwork(layer_sizes(3, 2), seed=4)
    net.input_lo = np.arange(net.n_inputs, dtype=float)
    net.input_hi = net.input_lo + 2.5
    net.reward_scale = 123.25
    doc = json.loads(json.dumps(net.to_dict()))
    back = QNetwork.from_dict(doc)
    X = np.random.default_rng(0).normal(size=(5, net.n_inputs))
    assert np.array_equal(back.forward(X), net.forward(X))
    assert np.array_equal(back.input_hi, net.input_hi)
    assert back.reward_scale == 123.25
    clone = net.copy()
    assert np.array_equal(clone.get_flat(), net.get_flat())
    clone.weights[0][0, 0] += 1
    assert not np.array_equal(clone.get_flat(), net.get_flat())


@pytest.mark.parametrize("method", ["sgd", "adam"])
def test_training_reduces_loss(method):
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(64, 3))
    y = np.sin(3 * X[:, 0]) + X[:, 1] * X[:, 2]
    net = QNetwork([3, 8, 1], seed=0)
    start = net.mse(X, y)
    lr = 0.05 if method == "sgd" else 0.01
    for _ in range(300):
        net, pre = mlp_train_batch(net, X, y, lr=lr, method=method)
    assert net.mse(X, y) < 0.2 * start
    assert pre >= net.mse(X, y) - 1e-3


def test_sgd_step_hand_value():
    net = QNetwork([1, 1], weights=[np.array([[2.0]])], biases=[np.array([0.0])])
    # loss (2x - y)^2 at x=1, y=0: gradient 4 for the weight and the bias
    net, mse = mlp_train_batch(net, [[1.0]], [0.0], lr=0.1, method="sgd")
    assert mse == 4.0
    assert net.weights[0][0, 0] == pytest.approx(1.6)
    assert net.biases[0][0] == pytest.approx(-0.4)


def test_adam_first_step_is_lr_sized():
    net = QNetwork([1, 1], weights=[np.array([[2.0]])], biases=[np.array([0.0])])
    mlp_train_batch(net, [[1.0]], [0.0], lr=0.01)
    assert net.weights[0][0, 0] == pytest.approx(1.99, abs=1e-8)


def test_train_batch_errors():
    net = QNetwork([2, 1])
    with pytest.raises(DomainError):
        mlp_train_batch(net, np.zeros((0, 2)), [])
    with pytest.raises(DomainError):
        mlp_train_batch(net, np.zeros((1, 2)), [0.0], method="lbfgs")


def test_zero_gradient_at_own_output():
    net = QNetwork([3, 4, 1], seed=2)
    x = np.full((4, 3), 0.3)
    before = net.get_flat()
    mlp_train_batch(net, x, net.forward(x), lr=0.1, method="sgd")
    assert np.array_equal(net.get_flat(), before)


def test_small_steps_descend_on_fixed_batch():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(6, 4))
    y = rng.normal(size=6)
    net = QNetwork([4, 5, 3, 1], seed=1)
    losses = []
    for _ in range(100):
        net, mse = mlp_train_batch(net, X, y, lr=1e-3, method="sgd")
        losses.append(mse)
    assert all(b <= a for a, b in zip(losses, losses[1:]))
