import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_fd, random_params, rel_err
from nnerror.diffnet import (AdamState, NetEval, NetworkParams, TrainingDiverged, forward, forward_value,
                             init_params, loss_gradient, sgd_step)
from nnerror.solver import SolverState, residual_loss, sample_times
from nnerror.systems import HENON_HEILES, NONLINEAR_OSCILLATOR


def test_init_is_deterministic():
    a, b = init_params(7, 32, 2), init_params(7, 32, 2)
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)


def test_init_depends_on_seed():
    a, b = init_params(7), init_params(8)
    assert not np.array_equal(a.W2, b.W2)


@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_init_within_three_sigma(seed, width, out_dim):
    p = init_params(seed, width, out_dim)
    assert p.is_finite()
    assert np.all(np.abs(p.W1) <= 3.0)
    assert np.all(np.abs(p.W2) <= 3.0 / np.sqrt(width))
    assert np.all(np.abs(p.W3) <= 3.0 / np.sqrt(width))
    assert p.width == width and p.out_dim == out_dim


def test_shape_validation():
    with pytest.raises(ValueError):
        NetworkParams(np.zeros((3, 1)), np.zeros(3), np.zeros((4, 4)), np.zeros(4), np.zeros((2, 4)), np.zeros(2))


def test_zero_network():
    ev = forward(init_params(0).zeros_like(), np.linspace(0, 5, 7))
    assert np.all(ev.value == 0) and np.all(ev.time_derivative == 0)


def test_closed_form_width_one():
    a, b, w2, b2, w, c = 1.3, 0.2, 0.7, -0.1, 2.0, 0.5
    p = NetworkParams(np.array([[a]]), np.array([b]), np.array([[w2]]), np.array([b2]), np.array([[w]]),
                      np.array([c]))
    t = np.linspace(-1, 3, 9)
    inner = w2 * np.sin(a * t + b) + b2
    ev = forward(p, t)
    assert np.allclose(ev.value[:, 0], w * np.sin(inner) + c, atol=1e-15)
    assert np.allclose(ev.time_derivative[:, 0], w * np.cos(inner) * w2 * a * np.cos(a * t + b), atol=1e-15)


def test_scalar_time_shapes():
    p = init_params(1, 8, 4)
    ev = forward(p, 0.3)
    assert ev.value.shape == (4,) and ev.time_derivative.shape == (4,)
    assert np.array_equal(forward_value(p, 0.3), ev.value)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
@pytest.mark.parametrize("t", [0.3, 2.7, 9.1])
def test_time_derivative_matches_fd(seed, t):
    p = random_params(seed, 32, 4)
    h = 1e-6
    fd = (forward_value(p, t + h) - forward_value(p, t - h)) / (2 * h)
    d = forward(p, t).time_derivative
    assert np.all(np.abs(d - fd) <= 1e-6 * (1 + np.abs(d)))


def _flat_loss(p: NetworkParams, t, loss):
    def f(flat):
        ev = forward(p.unflatten(flat), t)
        return loss(ev)[0]
    return f


def _quadratic_loss(target):
    def loss(ev: NetEval):
        r = ev.value - target
        q = ev.time_derivative
        L = np.sum(r * r) + 0.5 * np.sum(q * q * q)
        return L, 2 * r, 1.5 * q * q
    return loss


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_generic_loss_gradient_matches_fd(seed):
    p = random_params(seed, 5, 3)
    t = np.array([0.0, 0.4, 1.1, 3.3, 7.0])
    loss = _quadratic_loss(np.full(3, 0.1))
    _, grad = loss_gradient(p, t, loss)
    fd = central_fd(_flat_loss(p, t, loss), p.flatten(), 1e-6)
    assert rel_err(grad.flatten(), fd) <= 1e-5


def test_value_only_gradient_matches_fd():
    p = random_params(4, 5, 2)
    t = np.array([0.1, 0.9, 2.0])

    def loss(ev):
        return float(np.sum(ev.value ** 2)), 2 * ev.value, None

    _, grad = loss_gradient(p, t, loss, with_derivative=False)
    fd = central_fd(_flat_loss(p, t, loss), p.flatten(), 1e-6)
    assert rel_err(grad.flatten(), fd) <= 1e-5


@pytest.mark.parametrize("system", [NONLINEAR_OSCILLATOR, HENON_HEILES])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_residual_loss_gradient_matches_fd(system, seed):
    z0 = np.linspace(0.1, 0.4, system.dimension)
    s = SolverState.create(z0, seed, T=3.0, M=4, width=8)
    s.net = random_params(seed, 8, system.dimension, 0.2)
    t = sample_times(4, 3.0, np.random.default_rng(seed))

    def f(flat):
        trial = s.copy()
        trial.net = s.net.unflatten(flat)
        return residual_loss(trial, system, t)[0]

    _, grad = residual_loss(s, system, t)
    assert rel_err(grad.flatten(), central_fd(f, s.net.flatten(), 1e-6)) <= 1e-5


def test_constant_loss_has_zero_gradient():
    p = random_params(0)

    def loss(ev):
        return 3.0, np.zeros_like(ev.value), np.zeros_like(ev.time_derivative)

    _, grad = loss_gradient(p, np.array([0.5, 1.0]), loss)
    assert np.all(grad.flatten() == 0)


def test_norm_loss_at_zero_network():
    p = init_params(0).zeros_like()

    def loss(ev):
        return float(np.sum(ev.value ** 2)), 2 * ev.value, None

    L, grad = loss_gradient(p, np.array([0.7]), loss)
    assert L == 0 and np.all(grad.flatten() == 0)


def test_non_finite_output_reports_time():
    p = init_params(0, 4, 2)
    p.b3 = np.array([np.inf, 0.0])
    with pytest.raises(TrainingDiverged) as info:
        loss_gradient(p, np.array([0.5, 1.5]), _quadratic_loss(0.0))
    assert info.value.t == 0.5


def test_adam_zero_gradient_keeps_params():
    p = random_params(0)
    new = sgd_step(p, p.zeros_like(), AdamState())
    assert np.array_equal(new.flatten(), p.flatten())


def test_adam_zero_gradient_decays_moments():
    p = random_params(0)
    n = p.flatten().size
    state = AdamState(m=np.ones(n), v=np.ones(n))
    sgd_step(p, p.zeros_like(), state)
    assert np.all(state.m == 0.9) and np.all(state.v == 0.999)


def test_adam_step_opposes_gradient():
    p = random_params(1)
    g = random_params(2)
    state = AdamState(lr=1e-3)
    cur = p
    for _ in range(5):
        cur = sgd_step(cur, g, state)
    delta = cur.flatten() - p.flatten()
    gf = g.flatten()
    nz = gf != 0
    assert np.all(np.sign(delta[nz]) == -np.sign(gf[nz]))


def test_adam_is_deterministic():
    def run():
        p, state = random_params(3), AdamState()
        for i in range(10):
            p = sgd_step(p, random_params(100 + i), state)
        return p.flatten()
    assert np.array_equal(run(), run())


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_step(init_params(0, 4), init_params(0, 5), AdamState())


def test_flatten_round_trip():
    p = random_params(5, 7, 4)
    q = p.unflatten(p.flatten())
    for a, b in zip(p.arrays(), q.arrays()):
        assert np.array_equal(a, b)
    r = NetworkParams.from_dict(p.to_dict("n_"), "n_")
    assert np.array_equal(r.flatten(), p.flatten())
