"""Reference vector fields: radial attraction to the goal, radial repulsion
from neighbours, their bump-function blend, and the wind-compensated field the
heading controller tracks.

The batch helpers (``field_batch``, ``perturbed_heading_batch``) evaluate many
agents at once and are what the simulator uses; the single-agent functions are
thin wrappers around them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Vec2, as_vec2, wrap_angle

SINGULAR_RADIUS = 1e-6
FD_STEP = 1e-4


class DegenerateFieldError(ValueError):
    """Raised when a field direction is undefined (zero vector or goal singularity)."""


@dataclass
class FieldContext:
    position: Vec2
    goal: Vec2
    neighbors: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    d_r: float = 5.46
    d_c: float = 7.28

    def __post_init__(self):
        self.position = as_vec2(self.position)
        self.goal = as_vec2(self.goal)
        self.neighbors = np.asarray(self.neighbors, dtype=float).reshape(-1, 2)


def attractive_field(r, r_g) -> Vec2:
    diff = np.asarray(r, dtype=float) - np.asarray(r_g, dtype=float)
    d2 = float(diff @ diff)
    if d2 < SINGULAR_RADIUS ** 2:
        raise DegenerateFieldError("position is within the goal singularity radius")
    return -diff / d2


def repulsive_field(r_i, r_j) -> Vec2:
    diff = np.asarray(r_i, dtype=float) - np.asarray(r_j, dtype=float)
    d2 = float(diff @ diff)
    if d2 == 0.0:
        raise ValueError("coincident agent positions")
    return diff / d2


def bump(d, d_r: float, d_c: float):
    """Cubic smoothstep: 1 inside ``d_r``, 0 beyond ``d_c``, C1 in between."""
    if not 0 < d_r < d_c:
        raise ValueError(f"need 0 < d_r < d_c (got {d_r}, {d_c})")
    s = np.clip((d_c - np.asarray(d, dtype=float)) / (d_c - d_r), 0.0, 1.0)
    out = s * s * (3.0 - 2.0 * s)
    return float(out) if out.ndim == 0 else out


def field_batch(points: np.ndarray, goals: np.ndarray, others: np.ndarray,
                mask: np.ndarray, d_r: float, d_c: float):
    """Blended field at ``points`` (..., N, 2).

    ``goals`` is (N, 2), ``others`` the (M, 2) neighbour positions and ``mask``
    the (N, M) neighbour relation.  Returns ``(F, at_goal)`` where ``at_goal``
    flags points inside the goal singularity (their attractive term is zeroed).
    """
    diff_g = points - goals
    dg2 = np.einsum("...k,...k->...", diff_g, diff_g)
    at_goal = dg2 < SINGULAR_RADIUS ** 2
    att = -diff_g / np.where(at_goal, 1.0, dg2)[..., None]
    att = np.where(at_goal[..., None], 0.0, att)
    if others.shape[0] == 0:
        return att, at_goal

    rel = points[..., :, None, :] - others
    d2 = np.einsum("...k,...k->...", rel, rel)
    d = np.sqrt(d2)
    sigma = np.where(mask, bump(d, d_r, d_c), 0.0)
    safe_d2 = np.where(d2 > 0.0, d2, 1.0)
    rep = np.einsum("...j,...jk->...k", sigma / safe_d2, rel)
    keep = np.prod(1.0 - sigma, axis=-1)
    return keep[..., None] * att + rep, at_goal


def blended_field(ctx: FieldContext) -> Vec2:
    others = ctx.neighbors
    mask = np.ones((1, len(others)), dtype=bool)
    F, at_goal = field_batch(ctx.position[None], ctx.goal[None], others, mask, ctx.d_r, ctx.d_c)
    if at_goal[0]:
        raise DegenerateFieldError("position is within the goal singularity radius")
    return F[0]


def _unit(v: np.ndarray):
    n = np.sqrt(np.einsum("...k,...k->...", v, v))
    zero = n == 0.0
    return v / np.where(zero, 1.0, n)[..., None], n, zero


def perturbed_field(F, u_i: float, wind) -> Vec2:
    F = np.asarray(F, dtype=float)
    n = math.hypot(F[0], F[1])
    if n == 0.0:
        raise DegenerateFieldError("zero nominal field")
    return u_i * F / n - np.asarray(wind, dtype=float)


def field_heading(F) -> float:
    F = np.asarray(F, dtype=float)
    if F[0] == 0.0 and F[1] == 0.0:
        raise DegenerateFieldError("heading of a zero vector")
    return wrap_angle(math.atan2(F[1], F[0]))


def speed_from_goal(points: np.ndarray, goals: np.ndarray, k_u) -> np.ndarray:
    diff = points - goals
    return k_u * np.tanh(np.sqrt(np.einsum("...k,...k->...", diff, diff)))


def perturbed_heading_batch(positions, headings, goals, others, mask, d_r, d_c, k_u, wind, h=FD_STEP):
    """Wind-compensated field, its heading and heading rate for N agents.

    Returns a dict with ``Fp`` (N, 2), ``phi`` (N,), ``phi_dot`` (N,),
    ``u_nom`` (N,) and ``degenerate`` (N,) -- the last marks agents for which
    the blended or compensated field vanishes somewhere in the finite
    difference stencil; their ``phi``/``phi_dot`` are meaningless.
    """
    wind = np.asarray(wind, dtype=float)
    offsets = np.array([[0.0, 0.0], [h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]])
    pts = positions[None, :, :] + offsets[:, None, :]
    F, at_goal = field_batch(pts, goals, others, mask, d_r, d_c)
    Fhat, _, F_zero = _unit(F)
    u = speed_from_goal(pts, goals, k_u)
    Fp = u[..., None] * Fhat - wind
    Fpn, _, Fp_zero = _unit(Fp)
    degenerate = np.any(at_goal | F_zero | Fp_zero, axis=0)

    ddx = (Fpn[1] - Fpn[2]) / (2 * h)
    ddy = (Fpn[3] - Fpn[4]) / (2 * h)
    c, s = np.cos(headings), np.sin(headings)
    nx, ny = Fpn[0, :, 0], Fpn[0, :, 1]
    phi_dot = ((ddx[:, 1] * c + ddy[:, 1] * s) * nx - (ddx[:, 0] * c + ddy[:, 0] * s) * ny) * u[0]
    phi_dot = np.where(degenerate, 0.0, phi_dot)
    phi = np.arctan2(Fp[0, :, 1], Fp[0, :, 0])
    phi = np.where(phi <= -math.pi, math.pi, phi)
    return {
        "F": F[0],
        "Fp": np.where(degenerate[:, None], 0.0, Fp[0]),
        "phi": phi,
        "phi_dot": phi_dot,
        "u_nom": u[0],
        "degenerate": degenerate,
    }


def heading_rate(ctx: FieldContext, theta: float, k_u: float, wind) -> tuple[float, bool]:
    """Time derivative of the compensated-field heading along the agent's own
    propulsion ``u_i * (cos theta, sin theta)``, with ``u_i = k_u tanh(|r - r_g|)``.

    Spatial partials of the normalized field come from central differences.
    Returns ``(rate, degenerate)``; a degenerate stencil yields ``(0.0, True)``.
    """
    mask = np.ones((1, len(ctx.neighbors)), dtype=bool)
    out = perturbed_heading_batch(
        ctx.position[None], np.array([theta]), ctx.goal[None], ctx.neighbors, mask,
        ctx.d_r, ctx.d_c, k_u, wind,
    )
    return float(out["phi_dot"][0]), bool(out["degenerate"][0])


def perturbed_heading(ctx: FieldContext, k_u: float, wind) -> float:
    """Heading of the compensated field at ``ctx.position`` (no finite differences)."""
    F = blended_field(ctx)
    u = k_u * math.tanh(float(np.linalg.norm(ctx.position - ctx.goal)))
    return field_heading(perturbed_field(F, u, wind))
