"""Run the scenario ensembles and print their acceptance gates.

Each scenario runs as one ensemble with the preset's censoring cap. Gates
compare the fitted lifetimes, trapped fractions and escape kinds against the
ranges documented in docs/PHYSICS_MODEL.md.

Usage examples:

    # All four scenarios, 400 trajectories each (hours on a desktop)
    python scripts/reproduce_scenarios.py --n 400

    # Quick look at case b only, with single-trajectory timescales
    python scripts/reproduce_scenarios.py --scenario case-b --n 50 --timescales
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from typing import Dict, List, Tuple

from dotenv import load_dotenv

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if REPO_ROOT not in sys.path:
    sys.path.insert(0, REPO_ROOT)

from config import RunConfig, get_settings, resolve_run
from exceptions import CavityTrapError
from modules.trapping_pipeline import TrappingPipeline
from schemas import EnsembleReport, EscapeKindEnum
from services.ensemble import EnsembleResult

SCENARIOS = ("case-a", "case-b", "case-b-LG012", "case-b-intense")
INTENSE_MIN_N = 8

Gate = Tuple[str, bool, str]


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Reproduce the scenario ensembles and check their gates.")
    parser.add_argument(
        "--scenario",
        action="append",
        dest="scenarios",
        choices=SCENARIOS,
        help="Scenario to run; may be provided multiple times (default: all).",
    )
    parser.add_argument("--n", type=int, default=400, help="Trajectories per scenario (default: 400).")
    parser.add_argument("--seed", type=int, default=1, help="Master seed (default: 1).")
    parser.add_argument("--workers", type=int, default=None, help="Worker processes (default: all cores).")
    parser.add_argument("--timescales", action="store_true", help="Also check single-trajectory timescales.")
    return parser.parse_args()


def make_pipeline(scenario: str, n: int, seed: int, workers) -> TrappingPipeline:
    config = RunConfig().with_overrides("physics", scenario=scenario)
    config = config.with_overrides("ensemble", n=n, master_seed=seed)
    return TrappingPipeline(resolve_run(config), get_settings(), workers=workers)


def within(value, low: float, high: float) -> bool:
    return value is not None and low <= value <= high


def gates_for(scenario: str, result: EnsembleResult, report: EnsembleReport) -> List[Gate]:
    tau = report.tau_mle_ms
    if scenario == "case-a":
        untrapped = 1.0 - report.trapped_fraction
        return [
            ("untrapped fraction 0.45-0.75", within(untrapped, 0.45, 0.75), f"{untrapped:.3f}"),
            ("trapped tau_mle 10-25 ms", within(tau, 10.0, 25.0), f"{tau}"),
            ("trapped vx_rms 8-20 cm/s", within(report.trapped_vx_rms_cm_s, 8.0, 20.0), f"{report.trapped_vx_rms_cm_s}"),
            ("untrapped vx_rms 20-40 cm/s", within(report.untrapped_vx_rms_cm_s, 20.0, 40.0), f"{report.untrapped_vx_rms_cm_s}"),
        ]
    if scenario == "case-b":
        shortest = min(r.escape_time_ms for r in result.records)
        return [
            ("all T > 1 ms", shortest > 1.0, f"shortest {shortest:.3f} ms"),
            ("tau_mle 30-60 ms", within(tau, 30.0, 60.0), f"{tau}"),
            ("median coupling variation 0.05-0.5", within(report.median_coupling_variation, 0.05, 0.5),
             f"{report.median_coupling_variation}"),
        ]
    if scenario == "case-b-LG012":
        return [("tau_mle 45-85 ms", within(tau, 45.0, 85.0), f"{tau}")]

    times = [(r.escape_time_ms, r.escape_kind) for r in result.records]
    long_lived = [kind for t, kind in times if t > 600.0]
    radial = sum(1 for kind in long_lived if kind == EscapeKindEnum.RADIAL)
    longest = max(t for t, _ in times)
    return [
        ("some T > 500 ms", longest > 500.0, f"longest {longest:.1f} ms"),
        ("T > 600 ms mostly radial", bool(long_lived) and radial > len(long_lived) / 2,
         f"{radial}/{len(long_lived)} radial"),
    ]


def monotonicity_gate(reports: Dict[str, EnsembleReport]) -> List[Gate]:
    if "case-b" not in reports or "case-b-LG012" not in reports:
        return []
    b, lg = reports["case-b"], reports["case-b-LG012"]
    if b.tau_mle_ms is None or lg.tau_mle_ms is None:
        return [("tau(LG012) > tau(case b) at 2 sigma", False, "missing fit")]
    margin = 2.0 * math.hypot(b.sigma_ms or 0.0, lg.sigma_ms or 0.0)
    gap = lg.tau_mle_ms - b.tau_mle_ms
    return [("tau(LG012) > tau(case b) at 2 sigma", gap > margin, f"gap {gap:.2f} ms, 2 sigma {margin:.2f} ms")]


def timescale_gates(pipeline: TrappingPipeline) -> List[Gate]:
    report = pipeline.timescales()
    axial, radial = report.axial_period_us, report.radial_period_us
    rotation_ms, ratio = report.rotation_period_ms, report.amplitude_ratio
    return [
        ("axial period 1.4-2.6 us", within(axial, 1.4, 2.6), f"{axial:.3f} us (harmonic {report.harmonic_axial_period_us:.3f})"),
        ("radial period 50-150 us", within(radial, 50.0, 150.0), f"{radial:.1f} us (harmonic {report.harmonic_radial_period_us:.1f})"),
        ("tangential rotation 0.3-3 ms", within(rotation_ms, 0.3, 3.0), f"{rotation_ms:.3f} ms"),
        ("orthogonal/tangential radial amplitude 2-8", within(ratio, 2.0, 8.0), f"{ratio:.2f}"),
    ]


def print_gates(title: str, gates: List[Gate]) -> int:
    print(f"\n{title}")
    failed = 0
    for name, ok, detail in gates:
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failed += not ok
    return failed


def main() -> None:
    load_dotenv(".env")
    args = parse_args()
    scenarios = args.scenarios or list(SCENARIOS)

    failures = 0
    reports: Dict[str, EnsembleReport] = {}
    for scenario in scenarios:
        n = max(args.n, INTENSE_MIN_N) if scenario == "case-b-intense" else args.n
        print(f"Running {scenario} with {n} trajectories...")
        try:
            pipeline = make_pipeline(scenario, n, args.seed, args.workers)
            result = pipeline.ensemble()
        except CavityTrapError as exc:
            print(f"  Failed: {exc.message}")
            failures += 1
            continue
        report = result.report()
        reports[scenario] = report
        print(f"  tau_mle={report.tau_mle_ms} ms, sigma={report.sigma_ms} ms, trapped={report.trapped_fraction:.3f}")
        for notice in report.notices:
            print(f"  notice: {notice}")
        failures += print_gates(scenario, gates_for(scenario, result, report))
        if args.timescales and scenario == "case-b":
            failures += print_gates("case-b timescales", timescale_gates(pipeline))

    failures += print_gates("monotonicity", monotonicity_gate(reports))

    print("\nSummary:")
    print(f"  Scenarios run: {len(reports)}/{len(scenarios)}")
    print(f"  Failed gates : {failures}")
    if failures:
        raise SystemExit(1)


if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        print("Interrupted", file=sys.stderr)
        sys.exit(1)
