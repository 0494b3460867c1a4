"""Scenario files: parsing, validation and derived protocol constants.

A scenario is a YAML mapping with flat dotted keys (nested mappings are
flattened, so ``wind: {profile: constant}`` equals ``wind.profile: constant``)
plus an ``agents`` list.  See README.md for the full schema.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .core import (
    AgentParams,
    AgentState,
    NoiseParams,
    SafetyParams,
    ScenarioConfig,
    safety_param_violations,
    scenario_violations,
)
from .disturbance import WindModel
from .protocol import MarginSet, compute_margins

DEFAULTS = {
    "mode": "robust",
    "dt": 0.01,
    "steps": 15000,
    "seed": 0,
    "d_m": 0.8,
    "mu": 50.0,
    "eps": 0.1,
    "k_u": 1.0,
    "k_omega": 2.0,
    "eps_i": 0.5,
    "wind.profile": "constant",
    "wind.mean_x": 0.0,
    "wind.mean_y": 0.0,
    "wind.amplitude_x": 1.0,
    "wind.amplitude_y": 1.0,
    "wind.period_x": 40.0,
    "wind.period_y": 60.0,
    "wind.phase_x": 0.0,
    "wind.phase_y": 0.0,
    "wind.cov_xx": 0.0,
    "wind.cov_yy": 0.0,
    "wind.noise_scaling": "zoh",
    "meas.cov_x": 0.0,
    "meas.cov_y": 0.0,
    "meas.cov_theta": 0.0,
}
AGENT_KEYS = ("x0", "y0", "theta0", "goal_x", "goal_y", "radius")
AGENT_OPTIONAL = {"theta0": 0.0, "radius": 0.4}

# d_c = R_c, d_r = DR_FRACTION * d_c, d_eps = d_r - eps
DR_FRACTION = 0.75


class ScenarioError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  - " + "\n  - ".join(self.problems))


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


@dataclass(frozen=True)
class Derived:
    margins: MarginSet
    comm_radius: float
    d_c: float
    d_r: float
    d_eps: float
    eps_f: float

    def as_dict(self) -> dict:
        m = self.margins
        return {
            "eps_x": m.eps_x, "eps_y": m.eps_y, "eps_theta": m.eps_theta, "eps_d": m.eps_d,
            "d_m_inflated": m.d_m_inflated, "eps_J": m.eps_J, "R_c": self.comm_radius,
            "d_c": self.d_c, "d_r": self.d_r, "d_eps": self.d_eps, "eps_f": self.eps_f,
        }


def derive(meas_cov: np.ndarray, n_agents: int, d_m: float, eps: float,
           margin_override: tuple[float, float] | None = None) -> Derived:
    """Margins and blend radii implied by the sensor noise (or an explicit override
    ``(eps_d, eps_theta)``)."""
    if margin_override is None:
        margins = compute_margins([meas_cov] * max(n_agents, 1), d_m)
    else:
        eps_d, eps_theta = margin_override
        if eps_d < 0 or eps_theta < 0:
            raise ValueError("margin overrides must be non-negative")
        e = eps_d / math.sqrt(2.0)
        margins = MarginSet.from_bounds(e, e, eps_theta, d_m)
    comm = 2.0 * margins.d_m_inflated
    d_c = comm
    d_r = DR_FRACTION * d_c
    return Derived(margins, comm, d_c, d_r, d_r - eps, margins.eps_d + eps)


def build_scenario(raw: dict, *, mode: str | None = None, no_noise: bool = False,
                   margin_override: tuple[float, float] | None = None) -> ScenarioConfig:
    """Validate a raw mapping and assemble a :class:`ScenarioConfig`.

    Every problem found is reported at once through :class:`ScenarioError`.
    """
    if not isinstance(raw, dict) or not raw:
        raise ScenarioError(["scenario is empty"])
    problems: list[str] = []
    agents_raw = raw.get("agents")
    flat = _flatten({k: v for k, v in raw.items() if k != "agents"})
    unknown = sorted(set(flat) - set(DEFAULTS))
    problems += [f"unknown key {k!r}" for k in unknown]
    cfg = {**DEFAULTS, **{k: v for k, v in flat.items() if k in DEFAULTS}}
    if mode is not None:
        cfg["mode"] = mode
    if no_noise:
        for k in ("wind.cov_xx", "wind.cov_yy", "meas.cov_x", "meas.cov_y", "meas.cov_theta"):
            cfg[k] = 0.0

    numeric = [k for k in DEFAULTS if k not in ("mode", "wind.profile", "wind.noise_scaling")]
    for k in numeric:
        try:
            v = float(cfg[k])
            if not math.isfinite(v):
                raise ValueError
            cfg[k] = v
        except (TypeError, ValueError):
            problems.append(f"{k} must be a finite number (got {cfg[k]!r})")
            cfg[k] = float(DEFAULTS[k])
    for k in ("steps", "seed"):
        if cfg[k] != int(cfg[k]):
            problems.append(f"{k} must be an integer (got {cfg[k]})")
        cfg[k] = int(cfg[k])

    states, params = [], []
    if not isinstance(agents_raw, list) or not agents_raw:
        problems.append("agents must be a non-empty list")
        agents_raw = []
    for idx, a in enumerate(agents_raw):
        if not isinstance(a, dict):
            problems.append(f"agent {idx}: expected a mapping")
            continue
        extra = sorted(set(a) - set(AGENT_KEYS))
        problems += [f"agent {idx}: unknown key {k!r}" for k in extra]
        vals = {**AGENT_OPTIONAL, **a}
        missing = [k for k in AGENT_KEYS if k not in vals]
        if missing:
            problems.append(f"agent {idx}: missing {', '.join(missing)}")
            continue
        try:
            v = {k: float(vals[k]) for k in AGENT_KEYS}
            states.append(AgentState((v["x0"], v["y0"]), v["theta0"]))
            params.append(AgentParams(
                goal=(v["goal_x"], v["goal_y"]), radius=v["radius"],
                k_u=cfg["k_u"], k_omega=cfg["k_omega"], eps_i=cfg["eps_i"],
            ))
        except (TypeError, ValueError) as exc:
            problems.append(f"agent {idx}: {exc}")

    meas_cov = np.diag([cfg["meas.cov_x"], cfg["meas.cov_y"], cfg["meas.cov_theta"]])
    wind_cov = np.diag([cfg["wind.cov_xx"], cfg["wind.cov_yy"]])
    if np.any(np.diag(meas_cov) < 0) or np.any(np.diag(wind_cov) < 0):
        problems.append("covariances must be non-negative")
        meas_cov, wind_cov = np.abs(meas_cov), np.abs(wind_cov)

    wind = None
    try:
        wind = WindModel(
            profile=cfg["wind.profile"],
            mean=(cfg["wind.mean_x"], cfg["wind.mean_y"]),
            amplitude=(cfg["wind.amplitude_x"], cfg["wind.amplitude_y"]),
            period=(cfg["wind.period_x"], cfg["wind.period_y"]),
            phase=(cfg["wind.phase_x"], cfg["wind.phase_y"]),
            cov=wind_cov,
            noise_scaling=cfg["wind.noise_scaling"],
        )
    except ValueError as exc:
        problems.append(str(exc))

    derived = None
    try:
        derived = derive(meas_cov, len(params), cfg["d_m"], cfg["eps"], margin_override)
    except ValueError as exc:
        problems.append(str(exc))
    if derived is not None:
        m = derived.margins
        problems += safety_param_violations(
            cfg["d_m"], m.d_m_inflated, m.eps_J, derived.d_eps, derived.d_r,
            derived.d_c, derived.comm_radius, cfg["mu"],
        )
        problems += scenario_violations(states, params, derived.comm_radius, cfg["dt"], cfg["steps"], cfg["mode"])
        if cfg["eps"] <= 0:
            problems.append(f"eps must be > 0 (got {cfg['eps']})")
    if problems:
        raise ScenarioError(problems)

    m = derived.margins
    safety = SafetyParams(
        d_m=cfg["d_m"], d_m_inflated=m.d_m_inflated, eps_J=m.eps_J, d_eps=derived.d_eps,
        d_r=derived.d_r, d_c=derived.d_c, comm_radius=derived.comm_radius, mu=cfg["mu"],
    )
    noise = NoiseParams(
        wind_cov=wind_cov, meas_cov=meas_cov, eps_x=m.eps_x, eps_y=m.eps_y,
        eps_theta=m.eps_theta, eps_d=m.eps_d, eps=cfg["eps"], eps_f=derived.eps_f,
    )
    return ScenarioConfig(
        initial_states=tuple(states), agents=tuple(params), safety=safety, noise=noise, wind=wind,
        dt=cfg["dt"], steps=cfg["steps"], seed=cfg["seed"], mode=cfg["mode"],
        source={"config": cfg, "derived": derived.as_dict(), "agents": agents_raw},
    )


def load_raw(path) -> dict:
    text = Path(path).read_text()
    if not text.strip():
        raise ScenarioError([f"{path}: file is empty"])
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError([f"{path}: not valid YAML ({exc})"]) from exc
    if not isinstance(raw, dict):
        raise ScenarioError([f"{path}: top level must be a mapping"])
    return raw


def parse_scenario(path, **overrides) -> ScenarioConfig:
    return build_scenario(load_raw(path), **overrides)


def scenario_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def shipped_scenario(name: str) -> Path:
    """Path of a scenario file bundled with the package (e.g. ``"scenario1.cfg"``)."""
    p = Path(__file__).parent / "scenarios" / name
    if not p.exists():
        raise FileNotFoundError(p)
    return p


def antipodal_layout(n: int, radius: float, *, rotation: float = 0.0, agent_radius: float = 0.4) -> list[dict]:
    """Agents evenly spaced on a circle, each assigned the diametrically opposite point."""
    out = []
    for i in range(n):
        a = rotation + 2 * math.pi * i / n
        x, y = radius * math.cos(a), radius * math.sin(a)
        out.append({
            "x0": round(x, 6), "y0": round(y, 6), "theta0": round(math.atan2(-y, -x), 6),
            "goal_x": round(-x, 6), "goal_y": round(-y, 6), "radius": agent_radius,
        })
    return out
