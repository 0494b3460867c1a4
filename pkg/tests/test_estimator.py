import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swarmfield.estimator import (
    GAMMA,
    Estimate,
    dynamics,
    error_bounds,
    innovation,
    kalman_gain,
    linearize,
    predict,
    spectral_norm,
    update,
)

P_V = np.diag([0.01, 0.01, 0.01])
P_W = np.diag([0.01, 0.01])


def test_linearize_examples():
    np.testing.assert_array_equal(linearize([1.0, 2.0, 0.7], 0.0), np.zeros((3, 3)))
    A = linearize([0.0, 0.0, 0.0], 1.0)
    expected = np.zeros((3, 3))
    expected[1, 2] = 1.0
    np.testing.assert_allclose(A, expected, atol=1e-15)


def fd_jacobian(q, u, omega, wind, h=1e-6):
    J = np.zeros((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        J[:, k] = (dynamics(q + e, u, omega, wind) - dynamics(q - e, u, omega, wind)) / (2 * h)
    return J


def test_linearize_matches_finite_differences(rng):
    for _ in range(100):
        q = rng.uniform([-50, -50, -math.pi], [50, 50, math.pi])
        u, omega, wind = rng.uniform(0, 2), rng.uniform(-2, 2), rng.uniform(-1, 1, 2)
        np.testing.assert_allclose(linearize(q, u), fd_jacobian(q, u, omega, wind), atol=1e-6)


def test_predict_stationary_grows_by_process_noise():
    est = Estimate([1.0, 2.0, 0.3], P_V)
    out = predict(est, 0.0, 0.0, (0.0, 0.0), P_W, 0.01)
    np.testing.assert_array_equal(out.mean, est.mean)
    np.testing.assert_allclose(out.cov, P_V + 0.01 * GAMMA @ P_W @ GAMMA.T, atol=1e-16)


def test_predict_euler_step():
    est = Estimate([0.0, 0.0, 0.0], P_V)
    out = predict(est, 1.0, 0.0, (-0.2, 0.7), P_W, 0.01)
    np.testing.assert_allclose(out.mean, [0.008, 0.007, 0.0], atol=1e-15)


def test_predict_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        predict(Estimate(np.zeros(3), P_V), 1.0, 0.0, (0, 0), P_W, 0.0)


def test_predict_keeps_symmetry(rng):
    M = rng.normal(size=(3, 3))
    P = M @ M.T
    out = predict(Estimate([0, 0, 1.0], P), 0.8, 0.3, (0.1, 0.1), P_W, 0.01)
    np.testing.assert_array_equal(out.cov, out.cov.T)


def test_predict_matches_dense_formula(rng):
    M = rng.normal(size=(3, 3))
    P = M @ M.T
    q = np.array([1.0, -2.0, 0.9])
    u, dt = 0.7, 0.01
    A = linearize(q, u)
    expected = P + dt * (A @ P + P @ A.T + GAMMA @ P_W @ GAMMA.T)
    np.testing.assert_allclose(predict(Estimate(q, P), u, 0.0, (0, 0), P_W, dt).cov, expected, atol=1e-14)


def test_update_zero_innovation():
    est = Estimate([1.0, 2.0, 0.5], P_V * 3)
    out = update(est, est.mean.copy(), P_V)
    np.testing.assert_array_equal(out.mean, est.mean)
    assert np.trace(out.cov) < np.trace(est.cov)


def test_update_equal_covariances_moves_halfway():
    s2 = 0.04
    est = Estimate([0.0, 0.0, 0.0], s2 * np.eye(3))
    out = update(est, [1.0, -2.0, 0.4], s2 * np.eye(3))
    np.testing.assert_allclose(out.mean, [0.5, -1.0, 0.2])
    np.testing.assert_allclose(out.cov, 0.5 * s2 * np.eye(3))


def test_heading_innovation_wraps():
    est = Estimate([0.0, 0.0, 3.1], P_V)
    nu = innovation(est, [0.0, 0.0, -3.1])
    assert nu[2] == pytest.approx(2 * math.pi - 6.2)
    out = update(est, [0.0, 0.0, -3.1], P_V)
    assert -math.pi < out.mean[2] <= math.pi
    assert abs(math.remainder(out.mean[2] - 3.1 - 0.5 * nu[2], 2 * math.pi)) < 1e-12


def test_update_rejects_singular():
    with pytest.raises(np.linalg.LinAlgError):
        update(Estimate(np.zeros(3), np.zeros((3, 3))), np.ones(3), np.zeros((3, 3)))


def test_uninformative_measurement_leaves_estimate():
    est = Estimate([3.0, -1.0, 0.2], P_V)
    out = update(est, [100.0, 100.0, -2.0], 1e8 * np.eye(3))
    np.testing.assert_allclose(out.mean, est.mean, atol=1e-6)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_filter_translation_equivariance(tx, ty):
    shift = np.array([tx, ty, 0.0])
    q = np.array([1.0, 2.0, 0.4])
    y = np.array([1.3, 1.8, 0.5])
    a = update(predict(Estimate(q, P_V), 0.6, 0.2, (0.1, -0.2), P_W, 0.01), y, P_V)
    b = update(predict(Estimate(q + shift, P_V), 0.6, 0.2, (0.1, -0.2), P_W, 0.01), y + shift, P_V)
    np.testing.assert_allclose(b.mean - shift, a.mean, atol=1e-9)
    np.testing.assert_array_equal(a.cov, b.cov)


def test_batched_matches_single(rng):
    qs = rng.normal(size=(4, 3))
    Ps = np.stack([P_V * (k + 1) for k in range(4)])
    us = rng.uniform(0, 1, 4)
    batch = predict(Estimate(qs, Ps), us, np.zeros(4), (0.1, 0.2), P_W, 0.01)
    for k in range(4):
        one = predict(Estimate(qs[k], Ps[k]), us[k], 0.0, (0.1, 0.2), P_W, 0.01)
        np.testing.assert_allclose(batch.mean[k], one.mean, atol=1e-15)
        np.testing.assert_allclose(batch.cov[k], one.cov, atol=1e-15)


def test_kalman_gain_and_norm():
    np.testing.assert_allclose(kalman_gain(P_V, P_V), np.eye(3))
    assert spectral_norm(np.diag([1.0, -3.0, 2.0])) == pytest.approx(3.0)


def test_error_bounds():
    ex, ey, eth, ed = error_bounds([P_V])
    assert ed == pytest.approx(math.sqrt(2.02), abs=1e-12)
    assert ed == pytest.approx(math.hypot(ex, ey), abs=0)
    assert eth == ex == ey
    assert error_bounds([np.zeros((3, 3))])[3] == pytest.approx(math.sqrt(2))
