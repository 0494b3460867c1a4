"""Fixed-step closed-loop simulation and seeded Monte Carlo batches."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import ScenarioConfig, distance_matrix, min_pairwise_distance, wrap_angle, wrap_unchecked
from .disturbance import make_streams, mean_wind, wind_fluctuation
from .estimator import Estimate, predict, spectral_norm, update
from .protocol import AgentArrays, MarginSet, nominal_commands, robust_commands
from .vector_field import speed_from_goal

log = logging.getLogger(__name__)


class SimulationAborted(RuntimeError):
    pass


def margins_of(scenario: ScenarioConfig) -> MarginSet:
    n, s = scenario.noise, scenario.safety
    return MarginSet(
        eps_x=n.eps_x, eps_y=n.eps_y, eps_theta=n.eps_theta, eps_d=n.eps_d,
        d_m=s.d_m, d_m_inflated=s.d_m_inflated, eps_J=s.eps_J,
    )


@dataclass
class StepRecord:
    t: float
    pose: np.ndarray
    estimate: np.ndarray
    command: np.ndarray
    goal_dist: np.ndarray
    min_pair_dist: float
    est_err: np.ndarray


@dataclass
class SafetyEvent:
    t: float
    i: int
    j: int
    estimated_distance: float


@dataclass
class RunTrace:
    goals: np.ndarray
    initial: np.ndarray
    t: np.ndarray
    min_pair: np.ndarray
    wind_mean: np.ndarray
    pose: np.ndarray | None = None
    estimate: np.ndarray | None = None
    command: np.ndarray | None = None
    goal_dist: np.ndarray | None = None
    est_err: np.ndarray | None = None
    final_pose: np.ndarray | None = None
    events: list[SafetyEvent] = field(default_factory=list)
    aborted: bool = False
    message: str = ""

    def __len__(self) -> int:
        return len(self.t)

    def truncate(self, n: int) -> None:
        """Drop preallocated rows beyond the ``n`` executed steps."""
        self.t = self.t[:n]
        self.min_pair = self.min_pair[:n]
        self.wind_mean = self.wind_mean[:n]
        for name in ("pose", "estimate", "command", "goal_dist", "est_err"):
            arr = getattr(self, name)
            if arr is not None:
                setattr(self, name, arr[:n])

    def record(self, k: int) -> StepRecord:
        if self.pose is None:
            raise ValueError("trace was run without per-step recording")
        return StepRecord(
            t=float(self.t[k]), pose=self.pose[k], estimate=self.estimate[k], command=self.command[k],
            goal_dist=self.goal_dist[k], min_pair_dist=float(self.min_pair[k]), est_err=self.est_err[k],
        )


@dataclass
class RunSummary:
    seed: int
    steps: int
    min_distance: float
    final_goal_dist: list[float]
    final_heading: list[float]
    wind_heading: float
    alignment_error: list[float]
    safe: bool
    converged: bool
    d_m: float
    eps_f: float
    est_err_within_bound: float = 1.0
    max_cov_ratio: float = 0.0
    cov_bound_ok: bool = True
    gain_delta: float = 0.0
    gain_ok: bool = True
    margin_events: int = 0
    aborted: bool = False
    message: str = ""

    @property
    def max_final_goal_dist(self) -> float:
        return max(self.final_goal_dist) if self.final_goal_dist else 0.0


def euler_step(q: np.ndarray, u, omega, wind, dt: float) -> np.ndarray:
    """One explicit Euler step of the unicycle with additive wind; headings re-wrapped."""
    th = q[..., 2]
    out = np.array(q, dtype=float)
    out[..., 0] += dt * (u * np.cos(th) + wind[0])
    out[..., 1] += dt * (u * np.sin(th) + wind[1])
    out[..., 2] = wrap_unchecked(th + dt * omega)
    return out


class World:
    """Mutable simulation state.  Ground truth lives in ``q``; controllers see ``est`` only."""

    def __init__(self, scenario: ScenarioConfig, seed: int | None = None, record: bool = True):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.record = record
        self.margins = margins_of(scenario)
        self.agents = AgentArrays.from_params(scenario.agents)
        n, steps = scenario.n_agents, scenario.steps
        self.n = n
        self.k = 0
        self.q = np.array([[s.position[0], s.position[1], s.heading] for s in scenario.initial_states])
        self.u_prev = np.zeros(n)
        self.omega_prev = np.zeros(n)
        self.u_eps = speed_from_goal(self.q[:, :2], self.agents.goals, self.agents.k_u)
        self.inside_prev = np.zeros(n, dtype=bool)

        self.meas_cov = scenario.noise.meas_cov
        self.wind_cov = scenario.noise.wind_cov
        self.filtering = scenario.mode == "robust" and bool(np.any(np.diag(self.meas_cov) > 0))

        wind_rng, meas_rngs = make_streams(self.seed, n)
        self._wind_eta = wind_fluctuation(scenario.wind, wind_rng.standard_normal((steps, 2)), scenario.dt)
        meas_std = np.sqrt(np.diag(self.meas_cov))
        if self.filtering:
            z = np.stack([g.standard_normal((steps + 1, 3)) for g in meas_rngs], axis=1)
            self._meas_noise = z * meas_std
            y0 = self.q + self._meas_noise[0]
            y0[:, 2] = wrap_angle(y0[:, 2])
            self.est = Estimate(y0, np.broadcast_to(self.meas_cov, (n, 3, 3)).copy())
        else:
            self._meas_noise = None
            self.est = Estimate(self.q.copy(), np.zeros((n, 3, 3)))
        self.p0_norm = spectral_norm(self.est.cov)
        self.max_cov_ratio = 0.0
        self.max_gain = 0.0
        self.inv_meas = np.linalg.inv(self.meas_cov) if self.filtering else None
        self.wind_mean_prev = mean_wind(scenario.wind, 0.0)

        self.trace = RunTrace(
            goals=self.agents.goals.copy(),
            initial=self.q.copy(),
            t=np.arange(steps) * scenario.dt,
            min_pair=np.full(steps, np.inf),
            wind_mean=np.zeros((steps, 2)),
        )
        if record:
            self.trace.pose = np.zeros((steps, n, 3))
            self.trace.estimate = np.zeros((steps, n, 3))
            self.trace.command = np.zeros((steps, n, 2))
            self.trace.goal_dist = np.zeros((steps, n))
            self.trace.est_err = np.zeros((steps, n))
        self.est_err_count = 0
        self.est_err_within = 0

    def _track_norms(self, P: np.ndarray) -> None:
        # Frobenius norms bound spectral norms from above; the exact (SVD) norm
        # is only needed when that bound could raise a running maximum.
        fro = np.sqrt(np.einsum("nij,nij->n", P, P))
        bound = self.p0_norm + 1.0
        if np.any(fro / bound > self.max_cov_ratio):
            self.max_cov_ratio = max(self.max_cov_ratio, float((spectral_norm(P) / bound).max()))
        K = P @ self.inv_meas
        if np.sqrt(np.einsum("nij,nij->n", K, K)).max() > self.max_gain:
            self.max_gain = max(self.max_gain, float(spectral_norm(K).max()))

    @property
    def t(self) -> float:
        return self.k * self.scenario.dt

    def step(self) -> None:
        sc = self.scenario
        k, dt = self.k, sc.dt
        t = k * dt
        w_mean = mean_wind(sc.wind, t)
        w = w_mean + self._wind_eta[k]

        if self.filtering:
            y = self.q + self._meas_noise[k + 1]
            y[:, 2] = wrap_unchecked(y[:, 2])
            est = self.est
            if k > 0:
                est = predict(est, self.u_prev, self.omega_prev, self.wind_mean_prev, self.wind_cov, dt)
            est = update(est, y, self.meas_cov)
            self.est = est
            self._track_norms(est.cov)
        else:
            self.est = Estimate(self.q.copy(), self.est.cov)

        pos_hat = self.est.mean[:, :2]
        th_hat = self.est.mean[:, 2]
        safety = sc.safety
        d_hat = distance_matrix(pos_hat)
        mask = d_hat <= safety.comm_radius
        np.fill_diagonal(mask, False)

        if sc.mode == "robust":
            u, omega, _ = robust_commands(pos_hat, th_hat, self.u_prev, mask, self.agents,
                                          self.margins, safety, w_mean)
        else:
            d_true = distance_matrix(self.q[:, :2])
            inside = (mask & (d_true < safety.d_c)).any(axis=1)
            u_ic = speed_from_goal(self.q[:, :2], self.agents.goals, self.agents.k_u)
            self.u_eps = np.where(inside & self.inside_prev, self.u_eps, u_ic)
            self.inside_prev = inside
            u, omega, _ = nominal_commands(self.q[:, :2], self.q[:, 2], self.u_prev, self.u_eps,
                                           mask, self.agents, safety)

        low = safety.d_m_inflated if sc.mode == "robust" else safety.d_m
        bad = np.argwhere(np.triu(mask & (d_hat < low), 1))
        for i, j in bad:
            self.trace.events.append(SafetyEvent(t, int(i), int(j), float(d_hat[i, j])))

        err = np.hypot(*(self.q[:, :2] - pos_hat).T)
        self.est_err_count += self.n
        self.est_err_within += int(np.count_nonzero(err <= self.margins.eps_d))
        tr = self.trace
        tr.min_pair[k] = min_pairwise_distance(self.q[:, :2])
        tr.wind_mean[k] = w_mean
        if self.record:
            tr.pose[k] = self.q
            tr.estimate[k] = self.est.mean
            tr.command[k, :, 0] = u
            tr.command[k, :, 1] = omega
            tr.goal_dist[k] = np.hypot(*(self.q[:, :2] - self.agents.goals).T)
            tr.est_err[k] = err

        q_next = euler_step(self.q, u, omega, w, dt)
        if not (np.all(np.isfinite(q_next)) and np.all(np.isfinite(self.est.mean))):
            raise SimulationAborted(f"non-finite state at t={t:.2f}")
        self.q = q_next
        self.u_prev, self.omega_prev = u, omega
        self.wind_mean_prev = w_mean
        self.k += 1

    def summary(self) -> RunSummary:
        sc = self.scenario
        tr = self.trace
        executed = self.k
        final_min = min_pairwise_distance(self.q[:, :2])
        series = tr.min_pair[:executed]
        min_d = float(min(series.min() if executed else math.inf, final_min))
        gd = np.hypot(*(self.q[:, :2] - self.agents.goals).T)
        wm = mean_wind(sc.wind, self.t)
        wind_heading = math.atan2(-wm[1], -wm[0]) if np.any(wm != 0) else math.nan
        if math.isnan(wind_heading):
            align = [math.nan] * self.n
        else:
            align = [abs(wrap_angle(h - wind_heading)) for h in self.q[:, 2]]
        eps_f = sc.noise.eps_f
        delta = self.max_gain * self.margins.eps_d
        return RunSummary(
            seed=self.seed,
            steps=executed,
            min_distance=min_d,
            final_goal_dist=[float(x) for x in gd],
            final_heading=[float(x) for x in self.q[:, 2]],
            wind_heading=wind_heading,
            alignment_error=[float(a) for a in align],
            safe=min_d >= sc.safety.d_m,
            converged=bool(np.all(gd <= eps_f)),
            d_m=sc.safety.d_m,
            eps_f=eps_f,
            est_err_within_bound=self.est_err_within / max(self.est_err_count, 1),
            max_cov_ratio=self.max_cov_ratio,
            cov_bound_ok=self.max_cov_ratio <= 1.0 + 1e-12,
            gain_delta=delta,
            gain_ok=bool(np.all(self.agents.k_u > delta)),
            margin_events=len(tr.events),
            aborted=tr.aborted,
            message=tr.message,
        )


def step(world: World) -> World:
    world.step()
    return world


def run(scenario: ScenarioConfig, seed: int | None = None, record: bool = True) -> tuple[RunTrace, RunSummary]:
    world = World(scenario, seed, record=record)
    try:
        for _ in range(scenario.steps):
            world.step()
    except SimulationAborted as exc:
        log.error("run aborted (seed %s): %s", world.seed, exc)
        world.trace.aborted = True
        world.trace.message = str(exc)
    # an aborted step has already recorded its (pre-integration) row
    world.trace.truncate(min(world.k + int(world.trace.aborted), scenario.steps))
    world.trace.final_pose = world.q.copy()
    summary = world.summary()
    if not summary.gain_ok:
        log.warning("seed %s: k_u does not exceed the observer perturbation bound %.3g",
                    world.seed, summary.gain_delta)
    if not summary.cov_bound_ok:
        log.warning("seed %s: covariance bound exceeded (ratio %.3g)", world.seed, summary.max_cov_ratio)
    return world.trace, summary


def _summary_only(args) -> RunSummary:
    scenario, seed = args
    try:
        return run(scenario, seed, record=False)[1]
    except Exception as exc:  # noqa: BLE001 - a failed run must not sink the batch
        log.exception("run with seed %s failed", seed)
        return RunSummary(
            seed=seed, steps=0, min_distance=math.nan, final_goal_dist=[], final_heading=[],
            wind_heading=math.nan, alignment_error=[], safe=False, converged=False,
            d_m=scenario.safety.d_m, eps_f=scenario.noise.eps_f, aborted=True, message=repr(exc),
        )


@dataclass
class BatchReport:
    runs: list[RunSummary]
    safe_fraction: float
    converged_fraction: float
    worst_min_distance: float
    goal_dist_quantiles: dict[str, float]
    alignment_fraction: float
    failures: list[int]


ALIGNMENT_TOLERANCE = 0.3


def aggregate(runs: list[RunSummary]) -> BatchReport:
    runs = sorted(runs, key=lambda r: r.seed)
    n = len(runs)
    dists = np.array([d for r in runs for d in r.final_goal_dist])
    aligns = np.array([a for r in runs for a in r.alignment_error])
    qs = {}
    if dists.size:
        for name, p in (("p50", 50), ("p90", 90), ("p99", 99), ("max", 100)):
            qs[name] = float(np.percentile(dists, p))
    align_frac = float(np.mean(aligns <= ALIGNMENT_TOLERANCE)) if aligns.size and not np.isnan(aligns).all() else math.nan
    return BatchReport(
        runs=runs,
        safe_fraction=sum(r.safe for r in runs) / n,
        converged_fraction=sum(r.converged for r in runs) / n,
        worst_min_distance=float(np.nanmin([r.min_distance for r in runs])) if n else math.nan,
        goal_dist_quantiles=qs,
        alignment_fraction=align_frac,
        failures=[r.seed for r in runs if r.aborted],
    )


def monte_carlo(scenario: ScenarioConfig, seeds, parallel: int = 1) -> BatchReport:
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("at least one seed is required")
    jobs = [(scenario, s) for s in seeds]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            runs = list(pool.map(_summary_only, jobs))
    else:
        runs = [_summary_only(j) for j in jobs]
    return aggregate(runs)


def min_pairwise_series(trace: RunTrace) -> np.ndarray:
    if trace.goals.shape[0] < 2:
        return np.zeros(0)
    return trace.min_pair.copy()


def final_report(summary: RunSummary, eps_f: float | None = None) -> list[dict]:
    eps_f = summary.eps_f if eps_f is None else eps_f
    rows = []
    for i, (d, h) in enumerate(zip(summary.final_goal_dist, summary.final_heading)):
        wh = summary.wind_heading
        err = math.nan if math.isnan(wh) else abs(wrap_angle(h - wh))
        rows.append({
            "agent_id": i, "final_goal_dist": d, "eps_f": eps_f, "within_eps_f": d <= eps_f,
            "final_heading": h, "wind_opposite": wh, "alignment_error": err,
        })
    return rows
