"""Command-line entry point for the cavity doughnut-trap simulator.

Usage examples:

    # Steady state and correlation integrals at a (g, S) point
    python main.py steady --scenario case-a --g 100 --S 50

    # Axial friction and diffusion scan at the doughnut radius
    python main.py coeffs --scenario case-a --rho max --points 600

    # One recorded trajectory with tangential incidence
    python main.py simulate --scenario case-b --incidence tangential --seed 3

    # Certify the default step against a dt/2 refinement
    python main.py simulate --scenario case-b --probe

    # 400-trajectory ensemble with survival fit
    python main.py ensemble --scenario case-b --n 400 --seed 1

    # Property suite
    python main.py validate

Exit codes: 0 success, 1 simulator error, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from dotenv import load_dotenv

from config import (
    ResolvedRun,
    RunConfig,
    dump_run_config,
    get_settings,
    load_run_config,
    resolve_run,
)
from exceptions import CavityTrapError
from modules.trapping_pipeline import TrappingPipeline, rotation_period, trajectory_rows
from modules.validation_pipeline import ValidationSuite
from services.sde import angular_momentum_x
from utils.output import emit, log, render_report, render_table

COMMANDS = ("steady", "coeffs", "dressed", "simulate", "ensemble", "validate")


# ============================================================================
# Argument parsing
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run configuration file (.toml, otherwise YAML)")
    common.add_argument("--scenario", help="Scenario preset name (default: case-b)")
    common.add_argument("--dt", type=float, help="SDE time step [μs]")
    common.add_argument("--t-max", type=float, dest="t_max", help="Censoring cap [μs]")
    common.add_argument("--n", type=int, help="Ensemble size")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--grid", type=int, help="Cache nodes per axis (>= 33)")
    common.add_argument("--no-cache", action="store_true", help="Solve the master equation at every point")
    common.add_argument("--workers", type=int, help="Worker processes")
    common.add_argument("--output-dir", dest="output_dir", help="Directory for ensemble outputs")
    common.add_argument("--output", help="Write the table or report here instead of stdout")
    common.add_argument("--dump-config", dest="dump_config", help="Write the resolved configuration ('-' for stdout) and exit")
    common.add_argument("--no-timestamp", action="store_true", help="Omit the timestamp metadata line")
    common.add_argument("--quiet", action="store_true", help="Suppress status lines and progress bars")

    parser = argparse.ArgumentParser(prog="cavity-trap", description="Cavity doughnut-trap atom simulator.")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")

    steady = subparsers.add_parser("steady", parents=[common], help="Steady state and correlation integrals")
    steady.add_argument("--g", type=float, help="Coupling [rad/μs]")
    steady.add_argument("--S", type=float, help="Stark shift [rad/μs]")
    steady.add_argument("--x", type=float, help="Axial position in units of λ_S (instead of --g/--S)")
    steady.add_argument("--rho", default="max", help="Radius [μm] or 'max' (with --x)")

    for name, text in (("coeffs", "Axial friction, diffusion and force scan"), ("dressed", "Dressed-state detuning scan")):
        scan = subparsers.add_parser(name, parents=[common], help=text)
        scan.add_argument("--rho", default="max", help="Radius [μm] or 'max'")
        scan.add_argument("--points", type=int, default=600, help="Scan points over x/λ_S in [0, 2.5]")

    simulate = subparsers.add_parser("simulate", parents=[common], help="One recorded trajectory")
    simulate.add_argument("--incidence", choices=("random", "tangential", "orthogonal"))
    simulate.add_argument("--theta", type=float, help="Initial polar angle [rad]; overrides --incidence")
    simulate.add_argument("--index", type=int, default=0, help="Trajectory index (stream id)")
    simulate.add_argument("--probe", action="store_true", help="Report the dt versus dt/2 convergence probe instead")
    simulate.add_argument("--horizon", type=float, default=1000.0, help="Probe horizon [μs]")

    ensemble = subparsers.add_parser("ensemble", parents=[common], help="Monte Carlo ensemble and survival fit")
    ensemble.add_argument("--incidence", choices=("random", "tangential", "orthogonal"))

    validate = subparsers.add_parser("validate", parents=[common], help="Property suite across all modules")
    validate.add_argument("--oracle-points", type=int, default=20, dest="oracle_points")
    return parser


def resolve_from_args(args: argparse.Namespace) -> ResolvedRun:
    """Defaults < scenario preset < config file < flags."""
    config = load_run_config(args.config) if args.config else RunConfig()
    config = config.with_overrides("physics", scenario=args.scenario)
    config = config.with_overrides("sde", dt=args.dt, t_max=args.t_max)
    config = config.with_overrides(
        "ensemble",
        n=args.n,
        master_seed=args.seed,
        workers=args.workers,
        incidence=getattr(args, "incidence", None),
    )
    config = config.with_overrides(
        "grid",
        n_g=args.grid,
        n_s=args.grid,
        use_cache=False if args.no_cache else None,
    )
    config = config.with_overrides(
        "io",
        output_dir=args.output_dir,
        timestamp=False if args.no_timestamp else None,
    )
    return resolve_run(config)


# ============================================================================
# Subcommands
# ============================================================================

def base_metadata(run: ResolvedRun) -> dict:
    return {"scenario": run.scenario, "scenario_hash": run.scenario_hash()}


def cmd_steady(pipeline: TrappingPipeline, args: argparse.Namespace) -> int:
    if args.x is not None:
        report = pipeline.steady_at(args.x, pipeline.resolve_rho(args.rho))
    else:
        report = pipeline.steady_report(args.g, args.S)
    text = render_report(report.model_dump(), base_metadata(pipeline.run), pipeline.run.io.timestamp)
    emit(text, args.output)
    return 0


def cmd_coeffs(pipeline: TrappingPipeline, args: argparse.Namespace) -> int:
    rho = pipeline.resolve_rho(args.rho)
    rows = pipeline.coefficient_scan(rho, args.points)
    metadata = {**base_metadata(pipeline.run), "rho": rho}
    text = render_table(
        ("x_over_lambda_S", "gamma_xx", "D_xx_over_M2", "force_over_M", "force_x_over_M"),
        rows,
        metadata,
        pipeline.run.io.timestamp,
    )
    emit(text, args.output)
    return 0


def cmd_dressed(pipeline: TrappingPipeline, args: argparse.Namespace) -> int:
    rho = pipeline.resolve_rho(args.rho)
    rows = pipeline.dressed_scan(rho, args.points)
    metadata = {**base_metadata(pipeline.run), "rho": rho, "probe_detuning": pipeline.params.delta_p}
    text = render_table(("x_over_lambda_S", "delta_plus", "delta_minus"), rows, metadata, pipeline.run.io.timestamp)
    emit(text, args.output)
    return 0


def cmd_simulate(pipeline: TrappingPipeline, args: argparse.Namespace) -> int:
    if args.probe:
        report = pipeline.probe(horizon=args.horizon, seed=args.index)
        emit(render_report(report.model_dump(), base_metadata(pipeline.run), pipeline.run.io.timestamp), args.output)
        return 0 if report.stable else 1
    trajectory = pipeline.simulate_single(args.index, incidence=args.incidence, theta=args.theta)
    run = pipeline.run
    metadata = {
        **base_metadata(run),
        "seed": f"{run.ensemble.master_seed}:{args.index}",
        "dt": run.sde.dt,
        "escape_kind": trajectory.escape_kind,
        "escape_time": trajectory.escape_time,
        "vx_rms": trajectory.vx_rms,
        "rotation_period": rotation_period(trajectory),
        "angular_momentum_x": float(angular_momentum_x(trajectory.initial.r, trajectory.initial.v)),
    }
    text = render_table(
        ("t", "x", "y", "z", "vx", "vy", "vz", "rho"),
        trajectory_rows(trajectory),
        metadata,
        run.io.timestamp,
    )
    emit(text, args.output)
    return 0


def cmd_ensemble(pipeline: TrappingPipeline, args: argparse.Namespace) -> int:
    run = pipeline.run
    result = pipeline.ensemble()
    out_dir = Path(run.io.output_dir or pipeline.settings.output_dir) / run.scenario
    metadata = {**base_metadata(run), "master_seed": run.ensemble.master_seed, "dt": run.sde.dt}
    timestamp = run.io.timestamp

    emit(
        render_table(
            ("index", "seed", "T_ms", "vx_rms_cm_s", "escape_kind", "censored"),
            (
                (r.index, r.seed_label, r.escape_time_ms, r.vx_rms_cm_s, r.escape_kind, r.censored)
                for r in result.records
            ),
            metadata,
            timestamp,
        ),
        out_dir / "trajectories.csv",
    )
    fit = result.survival
    emit(
        render_table(("t_ms", "P"), zip(fit.times, fit.survival) if fit else [], metadata, timestamp),
        out_dir / "survival.csv",
    )
    report = result.report().model_dump()
    report["notices"] = "; ".join(report["notices"]) or None
    text = render_report(report, metadata, timestamp)
    emit(text, out_dir / "report.txt")
    emit(text, args.output)
    if not args.quiet:
        log("ENSEMBLE", f"Wrote trajectories.csv, survival.csv and report.txt to {out_dir}")
    return 0


def cmd_validate(pipeline: TrappingPipeline, args: argparse.Namespace) -> int:
    suite = ValidationSuite(
        pipeline.run,
        cache=pipeline.cache,
        oracle_points=args.oracle_points,
        verbose=not args.quiet,
    )
    checks = suite.run_all()
    text = render_table(
        ("module", "check", "status", "detail"),
        ((c.module, c.name, "pass" if c.passed else "fail", c.detail.replace(",", ";")) for c in checks),
        base_metadata(pipeline.run),
        pipeline.run.io.timestamp,
    )
    emit(text, args.output)
    return 0 if all(c.passed for c in checks) else 1


HANDLERS = {
    "steady": cmd_steady,
    "coeffs": cmd_coeffs,
    "dressed": cmd_dressed,
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "validate": cmd_validate,
}


# ============================================================================
# Dispatch
# ============================================================================

def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
        if args.command == "steady" and args.x is None and (args.g is None or args.S is None):
            parser.error("steady needs --g and --S, or --x")
    except SystemExit as e:
        return 0 if e.code == 0 else 2

    try:
        run = resolve_from_args(args)
        if args.dump_config:
            text = dump_run_config(run)
            emit(text, None if args.dump_config == "-" else args.dump_config)
            return 0
        pipeline = TrappingPipeline(run, get_settings(), workers=args.workers, verbose=not args.quiet)
        return HANDLERS[args.command](pipeline, args)
    except CavityTrapError as e:
        log("ERROR", f"{type(e).__name__}: {e.message}")
        for key, value in e.details.items():
            log("ERROR", f"  {key}: {value}")
        return 1


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv(".env")
    return dispatch(argv if argv is not None else sys.argv[1:])


if __name__ == "__main__":
    try:
        raise SystemExit(main())
    except KeyboardInterrupt:
        print("Interrupted", file=sys.stderr)
        sys.exit(1)
