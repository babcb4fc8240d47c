import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import gradient_rel_error, zero_system
from pemude.errors import InvalidArgument
from pemude.odesim import TimeSeries
from pemude.pem import PemUdeProblem, network_correction, polynomial_correction
from pemude.rbfnet import (AdamWHyper, AdamWState, adamw_step, finite_difference_gradient, forward,
                           init_network, load_checkpoint, loss_gradient, rbf, save_checkpoint)
from pemude.systems import rossler_system


def test_init_is_deterministic():
    a = init_network(3, 1, seed=7)
    b = init_network(3, 1, seed=7)
    assert np.array_equal(a.flatten(), b.flatten())
    assert not np.array_equal(a.flatten(), init_network(3, 1, seed=8).flatten())


def test_parameter_count():
    net = init_network(3, 1, seed=0)
    assert net.n_params == 3 * 10 + 10 + 10 * 10 + 10 + 10 * 1 + 1 == 161
    assert net.flatten().shape == (161,)


def test_init_scale_and_zero_biases():
    net = init_network(3, 1, seed=0)
    assert all(np.all(b == 0) for b in net.biases)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((100, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    assert np.mean(np.abs(forward(net, x))) < 1.0


def test_init_weight_std_follows_fan_in():
    net = init_network(400, 1, seed=2, hidden=(300, 10))
    assert abs(np.std(net.weights[0]) - 1 / math.sqrt(400)) < 0.002
    assert abs(np.std(net.weights[1]) - 1 / math.sqrt(300)) < 0.002


def test_zero_network_outputs_zero():
    net = init_network(3, 2, seed=0).unflatten(np.zeros(init_network(3, 2, 0).n_params))
    assert np.array_equal(forward(net, [5.0, -3.0, 100.0]), np.zeros(2))


def test_activation_values():
    assert rbf(0.0) == 1.0
    assert rbf(3.0) == rbf(-3.0) == pytest.approx(1.234e-4, rel=1e-3)
    assert rbf(3.0) == math.exp(-9.0)


def test_hand_set_subnetwork():
    w1, b1, u, c, w3, b3 = 0.7, -0.2, 1.3, 0.4, -2.0, 0.5
    net = init_network(1, 1, seed=0)
    ws = [np.zeros_like(w) for w in net.weights]
    bs = [np.zeros_like(b) for b in net.biases]
    ws[0][0, 0], bs[0][0] = w1, b1
    ws[1][0, 0], bs[1][0] = u, c
    ws[2][0, 0], bs[2][0] = w3, b3
    net = type(net)(net.layer_dims, ws, bs)
    for x in (-1.5, 0.0, 0.3, 2.0):
        want = w3 * math.exp(-(u * math.exp(-(w1 * x + b1) ** 2) + c) ** 2) + b3
        assert forward(net, [x])[0] == pytest.approx(want, rel=1e-14, abs=1e-15)


def test_forward_dimension_mismatch():
    with pytest.raises(InvalidArgument):
        forward(init_network(3, 1, 0), [1.0, 2.0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n_in=st.integers(1, 5), n_out=st.integers(1, 3))
def test_flatten_unflatten_round_trip(seed, n_in, n_out):
    net = init_network(n_in, n_out, seed)
    assert net.unflatten(net.flatten()) == net
    theta = np.random.default_rng(seed).standard_normal(net.n_params)
    assert np.array_equal(net.unflatten(theta).flatten(), theta)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000),
       x=st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_forward_finite_on_bounded_inputs(seed, x):
    net = init_network(3, 2, seed)
    theta = np.clip(net.flatten() * 5, -10, 10)
    assert np.all(np.isfinite(forward(net.unflatten(theta), x)))


def test_output_scale_multiplies_output():
    net = init_network(3, 2, seed=4)
    scaled = init_network(3, 2, seed=4, out_scale=[2.0, 0.5])
    x = np.array([0.1, -0.4, 0.9])
    assert np.allclose(forward(scaled, x), forward(net, x) * [2.0, 0.5], rtol=1e-15)


def test_checkpoint_round_trip(tmp_path):
    net = init_network(3, 1, seed=9, shift=[1.0, 2.0, 3.0], scale=[0.5, 2.0, 4.0])
    theta = net.flatten() + 1e-3 * np.arange(net.n_params) / 7.0
    path = save_checkpoint(tmp_path / "net.json", net, theta, epoch=123)
    loaded, epoch = load_checkpoint(path)
    assert epoch == 123
    assert loaded == net.unflatten(theta)
    assert loaded.seed == 9


# ------------------------------------------------------------------ gradients

def test_quadratic_gradient_is_identity():
    theta = np.array([0.3, -1.2, 4.0])
    g = loss_gradient(lambda th: 0.5 * th @ th, theta, grad=lambda th: th)
    assert np.array_equal(g, theta)
    fd = loss_gradient(lambda th: 0.5 * th @ th, theta)
    assert np.allclose(fd, theta, atol=1e-9)


def test_one_step_unrolled_gradient_matches_chain_rule():
    # dx/dt = a + b*x, one RK4 step of size h from x0, loss = mean of squared errors
    # over the two observation times
    x0, h, y1 = 0.8, 0.3, 1.7
    a, b = 0.4, -0.6
    data = TimeSeries([0.0, h], [[x0], [y1]])
    prob = PemUdeProblem(zero_system(1), polynomial_correction([[0], [1]], [0]), data, [0.0], substeps=1)
    val, g, bad = prob.loss_and_grad(np.array([a, b]))
    z = b * h
    P = 1 + z / 2 + z ** 2 / 6 + z ** 3 / 24
    dP = h / 2 + b * h ** 2 / 3 + b ** 2 * h ** 3 / 8
    x1 = x0 + h * (a + b * x0) * P
    dx1 = np.array([h * P, h * x0 * P + h * (a + b * x0) * dP])
    assert not bad
    assert val == pytest.approx(0.5 * (x1 - y1) ** 2, rel=1e-13)
    assert np.allclose(g, (x1 - y1) * dx1, rtol=1e-12)


def test_rossler_loss_gradient_matches_finite_differences(rossler_short):
    net = init_network(3, 1, seed=1)
    prob = PemUdeProblem(rossler_system(learn=True), network_correction(net, [1]), rossler_short,
                         [0.0, 0.25, 0.0])
    rng = np.random.default_rng(0)
    theta = net.flatten() + 0.1 * rng.standard_normal(net.n_params)
    coords = rng.choice(net.n_params, 20, replace=False)
    g = loss_gradient(prob.loss, theta, grad=lambda th: prob.loss_and_grad(th)[1])
    fd = finite_difference_gradient(prob.loss, theta, 1e-5, coords)
    assert gradient_rel_error(g, fd, coords) < 1e-4


def test_gradient_modes_agree(rossler_short):
    net = init_network(3, 1, seed=2)
    prob = PemUdeProblem(rossler_system(learn=True), network_correction(net, [1]), rossler_short,
                         [0.0, 0.25, 0.0])
    theta = net.flatten()
    _, g_rev, _ = prob.loss_and_grad(theta, "reverse")
    _, g_fwd, _ = prob.loss_and_grad(theta, "forward")
    assert np.allclose(g_rev, g_fwd, rtol=1e-9, atol=1e-12 * np.abs(g_fwd).max())


# ---------------------------------------------------------------------- AdamW

def test_adamw_zero_gradient_moments_decay():
    hyper = AdamWHyper(learning_rate=0.01, weight_decay=0.0)
    state = AdamWState(np.array([0.5, -0.2]), np.array([0.1, 0.3]), 4, hyper)
    _, st_ = adamw_step(np.array([1.0, 2.0]), np.zeros(2), state)
    assert np.allclose(st_.first_moment, 0.9 * state.first_moment)
    assert np.all(np.abs(st_.first_moment) < np.abs(state.first_moment))
    assert np.all(st_.second_moment < state.second_moment)


def test_adamw_zero_gradient_from_zero_state_is_identity():
    hyper = AdamWHyper(learning_rate=0.01, weight_decay=0.0)
    theta = np.array([1.0, -3.0])
    new, st_ = adamw_step(theta, np.zeros(2), AdamWState.zeros(2, hyper))
    assert np.array_equal(new, theta)
    assert st_.step_count == 1


def test_adamw_first_step():
    hyper = AdamWHyper(learning_rate=0.01, beta1=0.9, beta2=0.999, epsilon=1e-8, weight_decay=0.0)
    new, _ = adamw_step(np.array([2.0]), np.array([1.0]), AdamWState.zeros(1, hyper))
    assert new[0] == pytest.approx(2.0 - 0.01 / (1 + 1e-8), rel=1e-15)


def test_adamw_pure_decay():
    hyper = AdamWHyper(learning_rate=0.01, weight_decay=0.1)
    theta = np.array([3.0, -1.0])
    new, _ = adamw_step(theta, np.zeros(2), AdamWState.zeros(2, hyper))
    assert np.allclose(new, theta * (1 - 0.001), rtol=1e-15)


def test_adamw_length_mismatch():
    with pytest.raises(InvalidArgument):
        adamw_step(np.zeros(3), np.zeros(2), AdamWState.zeros(3))
