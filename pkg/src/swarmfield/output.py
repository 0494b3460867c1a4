"""File artifacts: trace and batch CSVs, run manifest, and SVG figures.

The SVG writer is deliberately tiny (polylines, markers, dashed reference
lines, tick labels) so that producing a run bundle needs nothing beyond numpy.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .sim import BatchReport, RunSummary, RunTrace

TRACE_HEADER = (
    "t", "agent_id", "x", "y", "theta", "x_hat", "y_hat", "theta_hat",
    "u_cmd", "omega_cmd", "goal_dist", "min_pair_dist", "est_err",
)
BATCH_HEADER = ("seed", "min_dist", "safe", "max_final_goal_dist", "converged")
FLOAT_FMT = "%.10g"


class OutputError(OSError):
    pass


@dataclass
class OutputBundle:
    trace_csv: Path | None = None
    summary_csv: Path | None = None
    plots: list[Path] = field(default_factory=list)
    manifest: Path | None = None


def _fmt(v: float) -> str:
    return FLOAT_FMT % v


def _open(path: Path, mode: str = "w"):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, mode, newline="", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_trace_csv(trace: RunTrace, path) -> Path:
    """One row per (step, agent), LF line endings."""
    if trace.pose is None:
        raise ValueError("trace was run without per-step recording")
    path = Path(path)
    n_steps, n_agents = trace.pose.shape[:2]
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for k in range(n_steps):
            t = _fmt(trace.t[k])
            mp = _fmt(trace.min_pair[k])
            pose, est, cmd = trace.pose[k], trace.estimate[k], trace.command[k]
            for i in range(n_agents):
                w.writerow((
                    t, i,
                    _fmt(pose[i, 0]), _fmt(pose[i, 1]), _fmt(pose[i, 2]),
                    _fmt(est[i, 0]), _fmt(est[i, 1]), _fmt(est[i, 2]),
                    _fmt(cmd[i, 0]), _fmt(cmd[i, 1]),
                    _fmt(trace.goal_dist[k, i]), mp, _fmt(trace.est_err[k, i]),
                ))
    return path


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Columns of a trace CSV keyed by header name."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    data = np.atleast_1d(data)
    return {name: data[name] for name in data.dtype.names}


def emit_batch_csv(report: BatchReport, path) -> Path:
    path = Path(path)
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BATCH_HEADER)
        for r in report.runs:
            w.writerow((r.seed, _fmt(r.min_distance), int(r.safe), _fmt(r.max_final_goal_dist), int(r.converged)))
    return path


def emit_manifest(path, *, scenario_path, scenario_hash: str, seeds, version: str, mode: str,
                  derived: dict, options: dict, results: dict | None = None) -> Path:
    path = Path(path)
    doc = {
        "tool": "swarmfield",
        "version": version,
        "scenario": str(scenario_path),
        "scenario_sha256": scenario_hash,
        "seeds": list(seeds),
        "mode": mode,
        "options": options,
        "derived": derived,
    }
    if results is not None:
        doc["results"] = results
    with _open(path) as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------- SVG

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=20, top=40, bottom=55)
COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _nice_ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if not hi > lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


class _Axes:
    def __init__(self, xlim, ylim, title: str, xlabel: str, ylabel: str, equal: bool = False):
        x0, x1 = xlim
        y0, y1 = ylim
        if x1 <= x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        pw = WIDTH - MARGIN["left"] - MARGIN["right"]
        ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        if equal:
            scale = min(pw / (x1 - x0), ph / (y1 - y0))
            cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
            x0, x1 = cx - pw / scale / 2, cx + pw / scale / 2
            y0, y1 = cy - ph / scale / 2, cy + ph / scale / 2
        self.xlim, self.ylim = (x0, x1), (y0, y1)
        self.pw, self.ph = pw, ph
        self.parts: list[str] = []
        self.legend: list[tuple[str, str, bool]] = []
        self._frame(title, xlabel, ylabel)

    def sx(self, x):
        x0, x1 = self.xlim
        return MARGIN["left"] + (np.asarray(x, float) - x0) / (x1 - x0) * self.pw

    def sy(self, y):
        y0, y1 = self.ylim
        return MARGIN["top"] + (1 - (np.asarray(y, float) - y0) / (y1 - y0)) * self.ph

    def _frame(self, title, xlabel, ylabel):
        L, T = MARGIN["left"], MARGIN["top"]
        p = self.parts
        p.append(f'<rect x="{L}" y="{T}" width="{self.pw}" height="{self.ph}" fill="white" stroke="black"/>')
        for v in _nice_ticks(*self.xlim):
            x = float(self.sx(v))
            p.append(f'<line x1="{x:.2f}" y1="{T + self.ph}" x2="{x:.2f}" y2="{T + self.ph + 5}" stroke="black"/>')
            p.append(f'<text x="{x:.2f}" y="{T + self.ph + 18}" text-anchor="middle" font-size="11">{v:g}</text>')
        for v in _nice_ticks(*self.ylim):
            y = float(self.sy(v))
            p.append(f'<line x1="{L - 5}" y1="{y:.2f}" x2="{L}" y2="{y:.2f}" stroke="black"/>')
            p.append(f'<text x="{L - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="11">{v:g}</text>')
        p.append(f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>')
        p.append(f'<text x="{L + self.pw / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
        p.append(f'<text transform="translate(16,{T + self.ph / 2}) rotate(-90)" text-anchor="middle" '
                 f'font-size="12">{escape(ylabel)}</text>')

    def line(self, x, y, color, label=None, width=1.5):
        x, y = np.asarray(x, float), np.asarray(y, float)
        if len(x) > 2000:  # thin long series; keeps files small without losing the envelope
            idx = np.unique(np.r_[np.linspace(0, len(x) - 1, 2000).astype(int), np.argmin(y)])
            x, y = x[idx], y[idx]
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(self.sx(x), self.sy(y)))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>')
        if label:
            self.legend.append((label, color, False))

    def hline(self, y, color, label):
        yy = float(self.sy(y))
        L = MARGIN["left"]
        self.parts.append(f'<line x1="{L}" y1="{yy:.2f}" x2="{L + self.pw}" y2="{yy:.2f}" stroke="{color}" '
                          f'stroke-dasharray="6,4" stroke-width="1.5" data-ref="{y:.10g}"/>')
        self.legend.append((label, color, True))

    def markers(self, x, y, color, shape="circle", label=None, size=4):
        for a, b in zip(self.sx(x), self.sy(y)):
            if shape == "square":
                self.parts.append(f'<rect x="{a - size:.2f}" y="{b - size:.2f}" width="{2 * size}" '
                                  f'height="{2 * size}" fill="none" stroke="{color}"/>')
            elif shape == "cross":
                self.parts.append(f'<path d="M{a - size:.2f},{b - size:.2f}L{a + size:.2f},{b + size:.2f}'
                                  f'M{a - size:.2f},{b + size:.2f}L{a + size:.2f},{b - size:.2f}" stroke="{color}"/>')
            else:
                self.parts.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{size}" fill="{color}"/>')
        if label:
            self.legend.append((label, color, False))

    def svg(self) -> str:
        L, T = MARGIN["left"], MARGIN["top"]
        leg = []
        for k, (label, color, dashed) in enumerate(self.legend):
            y = T + 14 + 16 * k
            dash = ' stroke-dasharray="6,4"' if dashed else ""
            leg.append(f'<line x1="{L + self.pw - 150}" y1="{y}" x2="{L + self.pw - 125}" y2="{y}" '
                       f'stroke="{color}" stroke-width="2"{dash}/>')
            leg.append(f'<text x="{L + self.pw - 120}" y="{y + 4}" font-size="11">{escape(label)}</text>')
        body = "\n".join(self.parts + leg)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
                f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">\n{body}\n</svg>\n')


def _write_svg(ax: _Axes, path: Path) -> Path:
    with _open(path) as fh:
        fh.write(ax.svg())
    return path


def _limits(*arrays, pad=0.05):
    vals = np.concatenate([np.ravel(np.asarray(a, float)) for a in arrays])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.0, 1.0
    lo, hi = float(vals.min()), float(vals.max())
    span = hi - lo if hi > lo else 1.0
    return lo - pad * span, hi + pad * span


def plot_min_distance(t, min_pair, d_m: float, path, title="Smallest pairwise distance") -> Path:
    t, m = np.asarray(t, float), np.asarray(min_pair, float)
    ax = _Axes(_limits(t, pad=0), (0.0, _limits(m, [d_m])[1]), title, "time [s]", "distance [m]")
    ax.line(t, m, COLORS[0], "min distance")
    ax.hline(d_m, COLORS[3], f"d_m = {d_m:g} m")
    return _write_svg(ax, Path(path))


def plot_final_goal_distance(dists, eps_f: float, path, xlabel="agent") -> Path:
    d = np.asarray(dists, float)
    ids = np.arange(len(d))
    ax = _Axes((-0.5, len(d) - 0.5), (0.0, _limits(d, [eps_f])[1]), "Final distance from the goal",
               xlabel, "distance [m]")
    ax.markers(ids, d, COLORS[0], label="final distance")
    ax.hline(eps_f, COLORS[3], f"eps_f = {eps_f:.3g} m")
    return _write_svg(ax, Path(path))


def plot_final_heading(headings, wind_heading: float, path) -> Path:
    h = np.asarray(headings, float)
    ids = np.arange(len(h))
    ax = _Axes((-0.5, len(h) - 0.5), (-math.pi - 0.2, math.pi + 0.2), "Final orientations", "agent",
               "heading [rad]")
    ax.markers(ids, h, COLORS[0], label="final heading")
    if math.isfinite(wind_heading):
        ax.hline(wind_heading, COLORS[3], f"angle(-w) = {wind_heading:.3f} rad")
    return _write_svg(ax, Path(path))


def plot_trajectories(trace: RunTrace, path) -> Path:
    start, goals, final = trace.initial[:, :2], trace.goals, trace.final_pose[:, :2]
    paths = trace.pose[:, :, :2] if trace.pose is not None else None
    pts = [start, goals, final] + ([paths.reshape(-1, 2)] if paths is not None else [])
    allp = np.concatenate(pts)
    ax = _Axes(_limits(allp[:, 0]), _limits(allp[:, 1]), "Initial, goal and reached positions", "x [m]", "y [m]",
               equal=True)
    if paths is not None:
        for i in range(paths.shape[1]):
            ax.line(paths[:, i, 0], paths[:, i, 1], COLORS[i % len(COLORS)], width=0.8)
    ax.markers(start[:, 0], start[:, 1], "black", "square", "start")
    ax.markers(goals[:, 0], goals[:, 1], COLORS[3], "cross", "goal", size=5)
    ax.markers(final[:, 0], final[:, 1], COLORS[2], "circle", "reached", size=3)
    return _write_svg(ax, Path(path))


def emit_plots(trace: RunTrace, summary: RunSummary, out_dir) -> list[Path]:
    out = Path(out_dir)
    return [
        plot_min_distance(trace.t, trace.min_pair, summary.d_m, out / "min_distance.svg"),
        plot_final_goal_distance(summary.final_goal_dist, summary.eps_f, out / "final_goal_distance.svg"),
        plot_final_heading(summary.final_heading, summary.wind_heading, out / "final_heading.svg"),
        plot_trajectories(trace, out / "trajectories.svg"),
    ]


def emit_batch_plots(report: BatchReport, d_m: float, eps_f: float, out_dir) -> list[Path]:
    out = Path(out_dir)
    runs = report.runs
    seeds = np.array([r.seed for r in runs], float)
    mins = np.array([r.min_distance for r in runs], float)
    ax = _Axes(_limits(seeds), (0.0, _limits(mins, [d_m])[1]), "Smallest pairwise distance per run", "seed",
               "distance [m]")
    ax.markers(seeds, mins, COLORS[0], label="run minimum")
    ax.hline(d_m, COLORS[3], f"d_m = {d_m:g} m")
    p1 = _write_svg(ax, out / "batch_min_distance.svg")
    p2 = plot_final_goal_distance([r.max_final_goal_dist for r in runs], eps_f,
                                  out / "batch_final_goal_distance.svg", xlabel="run (sorted by seed)")
    return [p1, p2]
