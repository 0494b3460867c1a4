"""Coordination laws: robust linear/angular commands, the nominal baseline,
and the estimation-error safety margins.

Distances and headings fed to the robust laws are always *estimates*.  The
batch functions take the acting agents as rows (N) and the candidate
neighbours as columns (M) with an (N, M) boolean relation; single-agent
wrappers build a one-row batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import AgentParams, SafetyParams, as_vec2, wrap_unchecked
from .estimator import error_bounds
from .vector_field import (
    DegenerateFieldError,
    FieldContext,
    blended_field,
    perturbed_heading_batch,
)


@dataclass(frozen=True)
class NeighborView:
    id: int
    position: np.ndarray
    heading: float
    speed: float

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec2(self.position))
        if self.speed < 0:
            raise ValueError("published neighbour speed must be non-negative")


@dataclass(frozen=True)
class MarginSet:
    eps_x: float
    eps_y: float
    eps_theta: float
    eps_d: float
    d_m: float
    d_m_inflated: float
    eps_J: float

    @classmethod
    def from_bounds(cls, eps_x: float, eps_y: float, eps_theta: float, d_m: float) -> "MarginSet":
        if not eps_theta < math.pi / 2:
            raise ValueError(f"heading error bound {eps_theta:.4g} rad must be < pi/2")
        eps_d = math.hypot(eps_x, eps_y)
        return cls(
            eps_x=eps_x, eps_y=eps_y, eps_theta=eps_theta, eps_d=eps_d, d_m=d_m,
            d_m_inflated=d_m + 2 * eps_d,
            eps_J=guard_inflation(eps_d, eps_theta, d_m),
        )


def guard_inflation(eps_d: float, eps_theta: float, d_m: float) -> float:
    """Inflation of the moving-toward test so that an estimated hit implies a true one."""
    return (2 * eps_d + math.sin(eps_theta) * (d_m + 2 * eps_d)) / math.cos(eps_theta)


def compute_margins(meas_covs, d_m: float) -> MarginSet:
    if not d_m > 0:
        raise ValueError("d_m must be positive")
    ex, ey, eth, _ = error_bounds(meas_covs)
    return MarginSet.from_bounds(ex, ey, eth, d_m)


def _masked_smooth_min(a: np.ndarray, mask: np.ndarray, mu: float) -> np.ndarray:
    """Row-wise log-sum-exp minimum over masked entries; NaN for empty rows."""
    if a.shape[-1] == 0:
        return np.full(a.shape[:-1], np.nan)
    m = np.min(np.where(mask, a, np.inf), axis=-1)
    finite = np.isfinite(m)
    shift = np.where(finite, m, 0.0)
    e = np.where(mask, np.exp(-mu * (np.where(mask, a, shift[..., None]) - shift[..., None])), 0.0)
    s = e.sum(axis=-1)
    return np.where(finite, shift - np.log(np.where(finite, s, 1.0)) / mu, np.nan)


def smooth_min(values, mu: float) -> float:
    a = np.asarray(values, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("smooth_min of an empty sequence")
    if not mu > 0:
        raise ValueError("mu must be positive")
    return float(_masked_smooth_min(a, np.ones_like(a, dtype=bool), mu))


def nominal_speed(r, r_g, k_u: float) -> float:
    return k_u * math.tanh(math.dist(np.asarray(r, float), np.asarray(r_g, float)))


def conflict_free_speed(u_i: float, F, wind) -> float:
    F = np.asarray(F, dtype=float)
    n = math.hypot(F[0], F[1])
    if n == 0.0:
        raise DegenerateFieldError("zero nominal field")
    v = u_i * F / n - np.asarray(wind, dtype=float)
    return math.hypot(v[0], v[1])


def _headings_to_unit(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def guard_values(own_pos: np.ndarray, own_theta: np.ndarray, others: np.ndarray):
    """``(r_i - r_k) . eta_i`` for every (own, other) pair, plus ``r_i - r_k`` and distances."""
    rel = own_pos[:, None, :] - others[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", rel, rel))
    J = np.einsum("ijk,ik->ij", rel, _headings_to_unit(own_theta))
    return J, rel, d


def critical_neighbors(own_pos, own_heading: float, neighbors: Sequence[NeighborView], eps_J: float) -> set[int]:
    if not neighbors:
        return set()
    others = np.array([n.position for n in neighbors])
    J, _, _ = guard_values(as_vec2(own_pos)[None], np.array([own_heading]), others)
    return {n.id for n, j in zip(neighbors, J[0]) if j <= -eps_J and j < 0}


def _safe_speeds(u_ref, rel, d, J, others_theta, others_u, eps_i, d_low, d_eps):
    """Safe speed of each row agent w.r.t. each column agent (valid where J < 0)."""
    num = np.einsum("ijk,jk->ij", rel, _headings_to_unit(others_theta))
    u_match = others_u[None, :] * num / np.where(J < 0, J, -1.0)
    w = (d - d_low) / (d_eps - d_low)
    return u_ref[:, None] * w + eps_i[:, None] * u_match * (1.0 - w)


def safe_speed_wrt(u_ic: float, neighbor: NeighborView, own_pos, own_heading: float,
                   d_hat: float, margins: MarginSet, d_eps: float, eps_i: float) -> float:
    J, rel, _ = guard_values(as_vec2(own_pos)[None], np.array([own_heading]), neighbor.position[None])
    if not (J[0, 0] <= -margins.eps_J and J[0, 0] < 0):
        raise ValueError(f"neighbour {neighbor.id} is not critical (guard value {J[0, 0]:.4g})")
    out = _safe_speeds(
        np.array([u_ic]), rel, np.array([[d_hat]]), J, np.array([neighbor.heading]),
        np.array([neighbor.speed]), np.array([eps_i]), margins.d_m_inflated, d_eps,
    )
    return float(out[0, 0])


def linear_speed_batch(own_pos, own_theta, u_ic, others_pos, others_theta, others_u, mask,
                       eps_i, eps_J: float, d_low: float, d_eps: float, mu: float):
    """Robust speed law: smooth-min of safe speeds over critical neighbours
    within ``d_eps``, otherwise the conflict-free speed.  Clamped at zero.

    Returns ``(speeds, n_critical)``.
    """
    J, rel, d = guard_values(own_pos, own_theta, others_pos)
    crit = mask & (J <= -eps_J) & (J < 0) & (d <= d_eps)
    safe = _safe_speeds(u_ic, rel, d, J, others_theta, others_u, eps_i, d_low, d_eps)
    g = _masked_smooth_min(safe, crit, mu)
    has = crit.any(axis=1)
    u = np.where(has, np.maximum(0.0, np.where(has, g, 0.0)), u_ic)
    return u, crit.sum(axis=1)


def nominal_speed_batch(own_pos, own_theta, u_ic, u_eps, others_pos, others_theta, others_u, mask,
                        eps_i, d_m: float, d_eps: float, d_c: float):
    """Three-branch nominal speed law with a hard minimum and ``max{0, .}``."""
    J, rel, d = guard_values(own_pos, own_theta, others_pos)
    close = mask & (d <= d_eps)
    crit = close & (J < 0)
    safe = _safe_speeds(u_eps, rel, d, J, others_theta, others_u, eps_i, d_m, d_eps)
    hard_min = np.min(np.where(crit, safe, np.inf), axis=1, initial=np.inf)
    conflict = np.where(crit.any(axis=1), np.maximum(0.0, hard_min), u_eps)
    approach = (mask & (d < d_c)).any(axis=1)
    return np.where(close.any(axis=1), conflict, np.where(approach, u_eps, u_ic))


def _ctx_arrays(neighbors: Sequence[NeighborView]):
    if not neighbors:
        return np.zeros((0, 2)), np.zeros(0), np.zeros(0)
    return (
        np.array([n.position for n in neighbors]),
        np.array([n.heading for n in neighbors], dtype=float),
        np.array([n.speed for n in neighbors], dtype=float),
    )


def conflict_free_or_hover(own_pos, goal, neighbors_pos, k_u, safety: SafetyParams, wind) -> float:
    ctx = FieldContext(own_pos, goal, neighbors_pos, safety.d_r, safety.d_c)
    wind = np.asarray(wind, dtype=float)
    try:
        F = blended_field(ctx)
        return conflict_free_speed(nominal_speed(own_pos, goal, k_u), F, wind)
    except DegenerateFieldError:
        return float(np.hypot(*wind))


def linear_velocity_command(own_pos, own_heading: float, neighbors: Sequence[NeighborView], goal,
                            params: AgentParams, margins: MarginSet, safety: SafetyParams, wind) -> float:
    own_pos = as_vec2(own_pos)
    pos, th, spd = _ctx_arrays(neighbors)
    u_ic = conflict_free_or_hover(own_pos, goal, pos, params.k_u, safety, wind)
    u, _ = linear_speed_batch(
        own_pos[None], np.array([own_heading]), np.array([u_ic]), pos, th, spd,
        np.ones((1, len(pos)), dtype=bool), np.array([params.eps_i]),
        margins.eps_J, margins.d_m_inflated, safety.d_eps, safety.mu,
    )
    return float(u[0])


def angular_law(theta, phi, phi_dot, k_omega):
    return -k_omega * wrap_unchecked(np.asarray(theta) - phi) + phi_dot


def angular_velocity_command(theta_hat: float, ctx: FieldContext, k_u: float, wind, k_omega: float) -> float:
    wind = np.asarray(wind, dtype=float)
    out = perturbed_heading_batch(
        ctx.position[None], np.array([theta_hat]), ctx.goal[None], ctx.neighbors,
        np.ones((1, len(ctx.neighbors)), dtype=bool), ctx.d_r, ctx.d_c, k_u, wind,
    )
    phi, phi_dot = _hover_heading(out, wind)
    return float(np.where(np.isnan(phi), 0.0, angular_law(theta_hat, np.nan_to_num(phi), phi_dot, k_omega))[0])


def _hover_heading(field_out: dict, wind: np.ndarray):
    """Replace degenerate headings by the into-the-wind direction (NaN when calm)."""
    deg = field_out["degenerate"]
    if wind[0] == 0.0 and wind[1] == 0.0:
        hover = np.nan
    else:
        hover = math.atan2(-wind[1], -wind[0])
    phi = np.where(deg, hover, field_out["phi"])
    phi_dot = np.where(deg, 0.0, field_out["phi_dot"])
    return phi, phi_dot


def nominal_protocol_velocity(own_pos, own_heading: float, neighbors: Sequence[NeighborView], goal,
                              params: AgentParams, safety: SafetyParams, u_eps: float | None = None) -> float:
    """Nominal (disturbance-free) speed law on true states.

    ``u_eps`` is the conflict-free speed frozen when the agent entered the
    ``d_c`` disk of a neighbour; it defaults to the current conflict-free speed.
    """
    own_pos = as_vec2(own_pos)
    pos, th, spd = _ctx_arrays(neighbors)
    u_ic = nominal_speed(own_pos, goal, params.k_u)
    ue = u_ic if u_eps is None else u_eps
    u = nominal_speed_batch(
        own_pos[None], np.array([own_heading]), np.array([u_ic]), np.array([ue]), pos, th, spd,
        np.ones((1, len(pos)), dtype=bool), np.array([params.eps_i]),
        safety.d_m, safety.d_eps, safety.d_c,
    )
    return float(u[0])


def separation_rate(r_i, r_j, theta_i: float, theta_j: float, u_i: float, u_j: float) -> float:
    """Rate of change of |r_i - r_j| when both agents move along their headings (wind-free form)."""
    rji = np.asarray(r_i, float) - np.asarray(r_j, float)
    d = math.hypot(rji[0], rji[1])
    eta_i = np.array([math.cos(theta_i), math.sin(theta_i)])
    eta_j = np.array([math.cos(theta_j), math.sin(theta_j)])
    return float((u_i * (rji @ eta_i) - u_j * (rji @ eta_j)) / d)


@dataclass
class AgentArrays:
    """Per-agent constants laid out as arrays for the batch laws."""
    goals: np.ndarray
    k_u: np.ndarray
    k_omega: np.ndarray
    eps_i: np.ndarray

    @classmethod
    def from_params(cls, agents: Sequence[AgentParams]) -> "AgentArrays":
        return cls(
            goals=np.array([a.goal for a in agents]),
            k_u=np.array([a.k_u for a in agents]),
            k_omega=np.array([a.k_omega for a in agents]),
            eps_i=np.array([a.eps_i for a in agents]),
        )


def robust_commands(pos, theta, u_prev, mask, agents: AgentArrays, margins: MarginSet,
                    safety: SafetyParams, wind_mean):
    """Commands for all agents from their estimates.  Returns ``(u, omega, info)``."""
    wind_mean = np.asarray(wind_mean, dtype=float)
    fo = perturbed_heading_batch(pos, theta, agents.goals, pos, mask, safety.d_r, safety.d_c,
                                 agents.k_u, wind_mean)
    deg = fo["degenerate"]
    u_ic = np.where(deg, math.hypot(wind_mean[0], wind_mean[1]),
                    np.sqrt(np.einsum("ik,ik->i", fo["Fp"], fo["Fp"])))
    u, n_crit = linear_speed_batch(pos, theta, u_ic, pos, theta, u_prev, mask, agents.eps_i,
                                   margins.eps_J, margins.d_m_inflated, safety.d_eps, safety.mu)
    phi, phi_dot = _hover_heading(fo, wind_mean)
    calm = np.isnan(phi)
    omega = np.where(calm, 0.0, angular_law(theta, np.where(calm, 0.0, phi), phi_dot, agents.k_omega))
    return u, omega, {"u_ic": u_ic, "degenerate": deg, "n_critical": n_crit, "phi": phi}


def nominal_commands(pos, theta, u_prev, u_eps, mask, agents: AgentArrays, safety: SafetyParams):
    """Nominal protocol on exact states.  ``u_eps`` holds each agent's frozen speed."""
    zero = np.zeros(2)
    fo = perturbed_heading_batch(pos, theta, agents.goals, pos, mask, safety.d_r, safety.d_c,
                                 agents.k_u, zero)
    u_ic = fo["u_nom"]
    u = nominal_speed_batch(pos, theta, u_ic, u_eps, pos, theta, u_prev, mask, agents.eps_i,
                            safety.d_m, safety.d_eps, safety.d_c)
    phi, phi_dot = _hover_heading(fo, zero)
    calm = np.isnan(phi)
    omega = np.where(calm, 0.0, angular_law(theta, np.where(calm, 0.0, phi), phi_dot, agents.k_omega))
    return u, omega, {"u_ic": u_ic, "degenerate": fo["degenerate"], "phi": phi}
