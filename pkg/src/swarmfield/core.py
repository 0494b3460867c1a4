"""Shared domain types and small geometric helpers.

Positions are plain ``numpy`` arrays of shape ``(2,)`` (or ``(..., 2)`` when a
function is applied to a batch of agents).  Headings are radians wrapped to
``(-pi, pi]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .disturbance import WindModel

Vec2 = np.ndarray

TWO_PI = 2.0 * math.pi


def as_vec2(v) -> Vec2:
    arr = np.asarray(v, dtype=float).reshape(2)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite vector {arr!r}")
    return arr


def wrap_angle(a):
    """Wrap an angle (scalar or array) to ``(-pi, pi]``."""
    arr = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"cannot wrap non-finite angle {a!r}")
    r = wrap_unchecked(arr)
    if r.ndim == 0:
        return float(r)
    return r


def wrap_unchecked(a: np.ndarray) -> np.ndarray:
    # in-range values pass through bit-exact
    r = np.mod(a + math.pi, TWO_PI) - math.pi
    r = np.where(r <= -math.pi, r + TWO_PI, r)
    return np.where((a > -math.pi) & (a <= math.pi), a, r)


def pairwise_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return math.hypot(a[0] - b[0], a[1] - b[1])


def distance_matrix(positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def neighbor_mask(positions: np.ndarray, comm_radius: float) -> np.ndarray:
    """Boolean ``(N, N)`` matrix, True where j is inside i's closed sensing disk."""
    d = distance_matrix(positions)
    mask = d <= comm_radius
    np.fill_diagonal(mask, False)
    return mask


def neighbors_of(i: int, positions, comm_radius: float) -> set[int]:
    pos = np.asarray(positions, dtype=float)
    if not np.all(np.isfinite(pos)):
        raise ValueError("non-finite position")
    row = neighbor_mask(pos, comm_radius)[i]
    return {int(j) for j in np.flatnonzero(row)}


def min_pairwise_distance(positions: np.ndarray) -> float:
    """Smallest distance over unordered pairs; ``inf`` for fewer than two agents."""
    n = len(positions)
    if n < 2:
        return math.inf
    d = distance_matrix(positions)
    np.fill_diagonal(d, np.inf)
    return float(d.min())


@dataclass(frozen=True)
class AgentState:
    position: Vec2
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec2(self.position))
        object.__setattr__(self, "heading", wrap_angle(self.heading))


@dataclass(frozen=True)
class ControlCommand:
    linear_speed: float = 0.0
    angular_rate: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.linear_speed) and math.isfinite(self.angular_rate)):
            raise ValueError("non-finite control command")
        if self.linear_speed < 0:
            raise ValueError(f"negative linear speed {self.linear_speed}")


@dataclass(frozen=True)
class AgentParams:
    goal: Vec2
    radius: float = 0.4
    k_u: float = 1.0
    k_omega: float = 2.0
    eps_i: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "goal", as_vec2(self.goal))
        problems = []
        if not self.radius > 0:
            problems.append(f"radius must be > 0 (got {self.radius})")
        if not self.k_u > 0:
            problems.append(f"k_u must be > 0 (got {self.k_u})")
        if not self.k_omega > 0:
            problems.append(f"k_omega must be > 0 (got {self.k_omega})")
        if not 0 < self.eps_i < 1:
            problems.append(f"eps_i must lie in (0, 1) (got {self.eps_i})")
        if problems:
            raise ValueError("; ".join(problems))


def safety_param_violations(d_m, d_m_inflated, eps_J, d_eps, d_r, d_c, comm_radius, mu) -> list[str]:
    out = []
    if not d_m > 0:
        out.append(f"d_m must be > 0 (got {d_m})")
    if not d_m_inflated >= d_m:
        out.append(f"d_m' ({d_m_inflated}) must be >= d_m ({d_m})")
    if not d_m_inflated < d_eps:
        out.append(f"d_m' ({d_m_inflated:.6g}) must be < d_eps ({d_eps:.6g})")
    if not d_eps < d_r:
        out.append(f"d_eps ({d_eps:.6g}) must be < d_r ({d_r:.6g})")
    if not d_r < d_c:
        out.append(f"d_r ({d_r:.6g}) must be < d_c ({d_c:.6g})")
    if not d_c <= comm_radius:
        out.append(f"d_c ({d_c:.6g}) must be <= R_c ({comm_radius:.6g})")
    if not eps_J >= 0:
        out.append(f"eps_J must be >= 0 (got {eps_J})")
    if not mu > 0:
        out.append(f"mu must be > 0 (got {mu})")
    return out


@dataclass(frozen=True)
class SafetyParams:
    d_m: float
    d_m_inflated: float
    eps_J: float
    d_eps: float
    d_r: float
    d_c: float
    comm_radius: float
    mu: float = 50.0

    def __post_init__(self):
        problems = safety_param_violations(
            self.d_m, self.d_m_inflated, self.eps_J, self.d_eps,
            self.d_r, self.d_c, self.comm_radius, self.mu,
        )
        if problems:
            raise ValueError("invalid safety parameters: " + "; ".join(problems))


@dataclass(frozen=True)
class NoiseParams:
    wind_cov: np.ndarray
    meas_cov: np.ndarray
    eps_x: float
    eps_y: float
    eps_theta: float
    eps_d: float
    eps: float
    eps_f: float

    def __post_init__(self):
        wc = np.asarray(self.wind_cov, dtype=float).reshape(2, 2)
        mc = np.asarray(self.meas_cov, dtype=float).reshape(3, 3)
        object.__setattr__(self, "wind_cov", wc)
        object.__setattr__(self, "meas_cov", mc)
        for name, m in (("wind_cov", wc), ("meas_cov", mc)):
            if not np.allclose(m, m.T):
                raise ValueError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(m).min() < -1e-12:
                raise ValueError(f"{name} is not positive semidefinite")
        if np.count_nonzero(mc - np.diag(np.diag(mc))):
            raise ValueError("meas_cov must be diagonal")


@dataclass(frozen=True)
class ScenarioConfig:
    initial_states: tuple[AgentState, ...]
    agents: tuple[AgentParams, ...]
    safety: SafetyParams
    noise: NoiseParams
    wind: "WindModel"
    dt: float = 0.01
    steps: int = 15000
    seed: int = 0
    mode: str = "robust"
    source: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def goals(self) -> np.ndarray:
        return np.array([a.goal for a in self.agents])


def scenario_violations(initial_states: Sequence[AgentState], agents: Sequence[AgentParams],
                        comm_radius: float, dt: float, steps: int, mode: str) -> list[str]:
    out = []
    if not dt > 0:
        out.append(f"dt must be > 0 (got {dt})")
    if not steps >= 1:
        out.append(f"steps must be >= 1 (got {steps})")
    if mode not in ("robust", "nominal"):
        out.append(f"mode must be 'robust' or 'nominal' (got {mode!r})")
    if len(agents) < 1:
        out.append("at least one agent is required")
    if len(initial_states) != len(agents):
        out.append("initial state count does not match agent count")
    goals = np.array([a.goal for a in agents]).reshape(-1, 2)
    for i in range(len(goals)):
        for j in range(i + 1, len(goals)):
            d = pairwise_distance(goals[i], goals[j])
            if not d > 2 * comm_radius:
                out.append(f"goals of agents {i} and {j} are {d:.4g} m apart, need > 2*R_c = {2 * comm_radius:.4g} m")
    return out
