"""Command-line front end.

    swarmfield run      --scenario FILE --seed S --out DIR
    swarmfield batch    --scenario FILE --seeds N [--base-seed S] --out DIR [--parallel K] [--require-safe F]
    swarmfield validate --scenario FILE

Exit codes: 0 success, 1 usage or validation error, 2 runtime abort,
3 batch safe fraction below ``--require-safe``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .output import (
    OutputBundle,
    OutputError,
    emit_batch_csv,
    emit_batch_plots,
    emit_manifest,
    emit_plots,
    emit_trace_csv,
)
from .scenario import ScenarioError, parse_scenario, scenario_hash
from .sim import final_report, monte_carlo, run

EXIT_OK, EXIT_INVALID, EXIT_ABORT, EXIT_UNSAFE = 0, 1, 2, 3
U64_MAX = 2 ** 64 - 1

log = logging.getLogger("swarmfield")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError(f"{v} is outside the unsigned 64-bit range")
    return v


def _positive_int(text: str) -> int:
    v = _u64(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _fraction(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return v


def _margin_pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected two comma-separated numbers: EPS_D,EPS_THETA") from None
    if a < 0 or b < 0:
        raise argparse.ArgumentTypeError("margins must be non-negative")
    return a, b


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, type=Path, help="scenario file (YAML)")
    common.add_argument("--mode", choices=("robust", "nominal"), help="override the scenario's protocol mode")
    common.add_argument("--no-noise", action="store_true", help="zero the wind and measurement covariances")
    common.add_argument("--override-margins", type=_margin_pair, metavar="EPS_D,EPS_THETA",
                        help="replace the noise-derived margins")

    p = _Parser(prog="swarmfield", description="Robust multi-agent coordination under wind and sensor noise.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", parents=[common], help="simulate one seed and write a trace bundle")
    r.add_argument("--seed", type=_u64, help="RNG seed (default: the scenario's seed)")
    r.add_argument("--out", required=True, type=Path, help="output directory")

    b = sub.add_parser("batch", parents=[common], help="Monte Carlo batch over consecutive seeds")
    b.add_argument("--seeds", required=True, type=_positive_int, help="number of runs")
    b.add_argument("--base-seed", type=_u64, default=0, help="first seed (default 0)")
    b.add_argument("--out", required=True, type=Path, help="output directory")
    b.add_argument("--parallel", type=_positive_int, default=1, help="worker processes (default 1)")
    b.add_argument("--require-safe", type=_fraction, help="exit 3 if the safe fraction is below this")

    sub.add_parser("validate", parents=[common], help="check a scenario file and print derived values")
    return p


def _configure_logging() -> None:
    level = os.environ.get("SWARMFIELD_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load(args):
    return parse_scenario(args.scenario, mode=args.mode, no_noise=args.no_noise,
                          margin_override=args.override_margins)


def _options(args) -> dict:
    return {
        "mode": args.mode,
        "no_noise": args.no_noise,
        "override_margins": list(args.override_margins) if args.override_margins else None,
    }


def _cmd_validate(args, scenario) -> int:
    cfg = scenario.source["config"]
    print(f"{args.scenario}: OK")
    print(f"  agents={scenario.n_agents} dt={scenario.dt:g} steps={scenario.steps} mode={scenario.mode} "
          f"wind={scenario.wind.profile} mean=({cfg['wind.mean_x']:g}, {cfg['wind.mean_y']:g})")
    for k, v in scenario.source["derived"].items():
        print(f"  {k} = {v:.6g}")
    return EXIT_OK


def _write_final_report(summary, path: Path) -> Path:
    rows = final_report(summary)
    keys = ("agent_id", "final_goal_dist", "eps_f", "within_eps_f", "final_heading", "wind_opposite",
            "alignment_error")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys)
            for row in rows:
                w.writerow([("%.10g" % row[k]) if isinstance(row[k], float) else int(row[k]) for k in keys])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def _cmd_run(args, scenario) -> int:
    seed = scenario.seed if args.seed is None else args.seed
    trace, summary = run(scenario, seed)
    out: Path = args.out
    bundle = OutputBundle(
        trace_csv=emit_trace_csv(trace, out / "trace.csv"),
        summary_csv=_write_final_report(summary, out / "summary.csv"),
        plots=emit_plots(trace, summary, out),
    )
    bundle.manifest = emit_manifest(
        out / "manifest.json", scenario_path=args.scenario, scenario_hash=scenario_hash(args.scenario),
        seeds=[seed], version=__version__, mode=scenario.mode, derived=scenario.source["derived"],
        options=_options(args),
        results={"min_distance": summary.min_distance, "safe": summary.safe, "converged": summary.converged,
                 "steps": summary.steps, "aborted": summary.aborted},
    )
    print(f"seed {seed}: min distance {summary.min_distance:.4f} m (safe={summary.safe}), "
          f"max final goal distance {summary.max_final_goal_dist:.4f} m (converged={summary.converged})")
    print(f"wrote {out}")
    if summary.aborted:
        log.error("run aborted: %s", summary.message)
        return EXIT_ABORT
    return EXIT_OK


def _cmd_batch(args, scenario) -> int:
    seeds = [args.base_seed + k for k in range(args.seeds)]
    if seeds[-1] > U64_MAX:
        raise ValueError("seed range exceeds the unsigned 64-bit range")
    report = monte_carlo(scenario, seeds, parallel=args.parallel)
    out: Path = args.out
    emit_batch_csv(report, out / "summary.csv")
    emit_batch_plots(report, scenario.safety.d_m, scenario.noise.eps_f, out)
    emit_manifest(
        out / "manifest.json", scenario_path=args.scenario, scenario_hash=scenario_hash(args.scenario),
        seeds=seeds, version=__version__, mode=scenario.mode, derived=scenario.source["derived"],
        options=_options(args),
        results={"safe_fraction": report.safe_fraction, "converged_fraction": report.converged_fraction,
                 "worst_min_distance": report.worst_min_distance, "goal_dist_quantiles": report.goal_dist_quantiles,
                 "alignment_fraction": report.alignment_fraction, "failures": report.failures},
    )
    print(f"{len(seeds)} runs: safe fraction {report.safe_fraction:.3f}, converged fraction "
          f"{report.converged_fraction:.3f}, worst min distance {report.worst_min_distance:.4f} m")
    print(f"wrote {out}")
    if report.failures:
        log.error("%d run(s) aborted: seeds %s", len(report.failures), report.failures)
        return EXIT_ABORT
    if args.require_safe is not None and report.safe_fraction < args.require_safe:
        print(f"safe fraction {report.safe_fraction:.3f} is below the required {args.require_safe:.3f}",
              file=sys.stderr)
        return EXIT_UNSAFE
    return EXIT_OK


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        scenario = _load(args)
    except ScenarioError as exc:
        print(f"{args.scenario}: invalid scenario", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError) as exc:
        print(f"{args.scenario}: {exc}", file=sys.stderr)
        return EXIT_INVALID

    handlers = {"validate": _cmd_validate, "run": _cmd_run, "batch": _cmd_batch}
    try:
        return handlers[args.command](args, scenario)
    except OutputError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
