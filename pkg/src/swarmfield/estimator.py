"""Continuous-discrete EKF for the unicycle with additive wind.

The state is ``(x, y, theta)`` and the measurement is the full state plus
noise, so ``H = I``.  Every function accepts either one agent (``mean`` of
shape (3,), ``cov`` (3, 3)) or a stack of agents (``(N, 3)``, ``(N, 3, 3)``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import wrap_unchecked

GAMMA = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])


@dataclass
class Estimate:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.array(self.mean, dtype=float)
        self.cov = np.array(self.cov, dtype=float)

    @property
    def position(self) -> np.ndarray:
        return self.mean[..., :2]

    @property
    def heading(self):
        return self.mean[..., 2]


def dynamics(q, u, omega, wind) -> np.ndarray:
    """State derivative of the unicycle with additive planar wind."""
    q = np.asarray(q, dtype=float)
    th = q[..., 2]
    wind = np.asarray(wind, dtype=float)
    return np.stack(
        [u * np.cos(th) + wind[..., 0], u * np.sin(th) + wind[..., 1], np.broadcast_to(omega, th.shape)],
        axis=-1,
    ).astype(float)


def linearize(q, u) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    th = q[..., 2]
    u = np.broadcast_to(np.asarray(u, dtype=float), th.shape)
    A = np.zeros(th.shape + (3, 3))
    A[..., 0, 2] = -u * np.sin(th)
    A[..., 1, 2] = u * np.cos(th)
    return A


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def predict(est: Estimate, u, omega, wind, wind_cov, dt: float) -> Estimate:
    if not dt > 0:
        raise ValueError("dt must be positive")
    q = est.mean + dt * dynamics(est.mean, u, omega, wind)
    q[..., 2] = wrap_unchecked(q[..., 2])
    P = est.cov
    # A is nonzero only in column 2 (rows 0, 1), so A P touches rows 0 and 1 only
    th = est.mean[..., 2]
    a = np.stack([-u * np.sin(th), u * np.cos(th)], axis=-1)
    AP = np.zeros_like(P)
    AP[..., :2, :] = a[..., :, None] * P[..., 2:3, :]
    Q = GAMMA @ np.asarray(wind_cov, dtype=float) @ GAMMA.T
    P = P + dt * (AP + np.swapaxes(AP, -1, -2) + Q)
    return Estimate(q, symmetrize(P))


def innovation(est: Estimate, y) -> np.ndarray:
    nu = np.asarray(y, dtype=float) - est.mean
    nu[..., 2] = wrap_unchecked(nu[..., 2])
    return nu


def update(est: Estimate, y, meas_cov) -> Estimate:
    """Discrete correction with ``K = P (P + P_v)^-1``, heading innovation wrapped."""
    P = est.cov
    S = P + np.asarray(meas_cov, dtype=float)
    # K = P S^-1  <=>  K^T = S^-1 P, since P and S are symmetric
    K = np.swapaxes(np.linalg.solve(S, P), -1, -2)
    nu = innovation(est, y)
    q = est.mean + np.einsum("...ij,...j->...i", K, nu)
    q[..., 2] = wrap_unchecked(q[..., 2])
    P_new = P - K @ P
    return Estimate(q, symmetrize(P_new))


def kalman_gain(P, meas_cov) -> np.ndarray:
    """Continuous-time observer gain ``P P_v^-1`` (H = I)."""
    return np.asarray(P) @ np.linalg.inv(np.asarray(meas_cov, dtype=float))


def spectral_norm(M) -> np.ndarray:
    return np.linalg.norm(M, ord=2, axis=(-2, -1))


def error_bounds(meas_covs) -> tuple[float, float, float, float]:
    """Position/heading error bounds implied by the covariance bound
    ``|P(t)| <= |P_v| + 1`` with ``P(0) = P_v``.

    Returns ``(eps_x, eps_y, eps_theta, eps_d)``.
    """
    covs = np.asarray(meas_covs, dtype=float).reshape(-1, 3, 3)
    worst = float(spectral_norm(covs).max())
    e = math.sqrt(worst + 1.0)
    return e, e, e, math.hypot(e, e)
