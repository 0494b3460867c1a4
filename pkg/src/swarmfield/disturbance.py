"""Shared wind process and per-agent measurement noise."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import wrap_angle

PROFILES = ("constant", "sinusoidal")
NOISE_SCALINGS = ("zoh", "em")


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Matrix L with L L^T = cov; works for singular PSD matrices."""
    w, V = np.linalg.eigh(np.asarray(cov, dtype=float))
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class WindModel:
    """Mean-wind profile plus white Gaussian fluctuation of covariance ``cov``.

    ``constant``: the mean is ``mean`` for all t.
    ``sinusoidal``: ``(A_x sin(2 pi t / T_x + phi_x), A_y cos(2 pi t / T_y + phi_y))``.

    ``noise_scaling`` chooses how a per-step draw is realized: ``zoh`` holds a
    sample of covariance ``cov`` over the step; ``em`` scales it by
    ``1/sqrt(dt)`` so the position increment has covariance ``cov * dt``.
    """
    profile: str = "constant"
    mean: tuple[float, float] = (0.0, 0.0)
    amplitude: tuple[float, float] = (1.0, 1.0)
    period: tuple[float, float] = (40.0, 60.0)
    phase: tuple[float, float] = (0.0, 0.0)
    cov: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    noise_scaling: str = "zoh"

    def __post_init__(self):
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float).reshape(2, 2))
        problems = self.violations()
        if problems:
            raise ValueError("invalid wind model: " + "; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if self.profile not in PROFILES:
            out.append(f"unknown wind profile {self.profile!r}")
        if self.noise_scaling not in NOISE_SCALINGS:
            out.append(f"unknown noise scaling {self.noise_scaling!r}")
        if self.profile == "sinusoidal":
            if any(abs(a) > 1.0 for a in self.amplitude):
                out.append(f"sinusoidal amplitudes must be <= 1 m/s (got {self.amplitude})")
            if any(not p > 0 for p in self.period):
                out.append(f"sinusoidal periods must be > 0 (got {self.period})")
        if not np.allclose(self.cov, self.cov.T) or np.linalg.eigvalsh(self.cov).min() < -1e-12:
            out.append("wind covariance must be symmetric positive semidefinite")
        return out

    def __eq__(self, other):
        if not isinstance(other, WindModel):
            return NotImplemented
        return (
            (self.profile, self.mean, self.amplitude, self.period, self.phase, self.noise_scaling)
            == (other.profile, other.mean, other.amplitude, other.period, other.phase, other.noise_scaling)
            and np.array_equal(self.cov, other.cov)
        )

    __hash__ = None

    def max_rate(self) -> float:
        """Upper bound on |d mean / dt| per component."""
        if self.profile == "constant":
            return 0.0
        return max(2 * math.pi * abs(a) / p for a, p in zip(self.amplitude, self.period))


def mean_wind(model: WindModel, t):
    if model.profile == "constant":
        m = np.asarray(model.mean, dtype=float)
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(m, t.shape + (2,)).copy() if t.ndim else m.copy()
    t = np.asarray(t, dtype=float)
    ax, ay = model.amplitude
    tx, ty = model.period
    px, py = model.phase
    wx = ax * np.sin(2 * math.pi * t / tx + px)
    wy = ay * np.cos(2 * math.pi * t / ty + py)
    return np.stack([wx, wy], axis=-1)


def sample_wind(model: WindModel, t: float, rng: np.random.Generator, dt: float | None = None) -> np.ndarray:
    z = rng.standard_normal(2)
    return mean_wind(model, t) + wind_fluctuation(model, z, dt)


def wind_fluctuation(model: WindModel, z: np.ndarray, dt: float | None = None) -> np.ndarray:
    """Map standard-normal draws ``z`` (..., 2) to wind fluctuations."""
    eta = z @ _psd_factor(model.cov).T
    if model.noise_scaling == "em":
        if dt is None:
            raise ValueError("Euler-Maruyama scaling needs dt")
        eta = eta / math.sqrt(dt)
    return eta


def sample_measurement(q, meas_cov, rng: np.random.Generator) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    std = np.sqrt(np.clip(np.diag(np.asarray(meas_cov, dtype=float)), 0.0, None))
    y = q + std * rng.standard_normal(3)
    y[2] = wrap_angle(y[2])
    return y


def make_streams(seed: int, n_agents: int) -> tuple[np.random.Generator, list[np.random.Generator]]:
    """Independent generators: one for the wind, one per agent's sensor.

    Children of a ``SeedSequence`` are keyed by spawn index, so the wind
    stream does not change when agents are added.
    """
    wind = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    meas = [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, i))) for i in range(n_agents)]
    return wind, meas
