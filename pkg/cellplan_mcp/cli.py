"""cellplan: command-line front end for the planning pipeline.

Usage:
    cellplan solve-map scenarios/a1_rectangular.json --out runs/a1
    cellplan plan scenarios/a1_rectangular.json --out runs/a1 --emit load-pattern,sites
    cellplan plan scenarios/a1_rectangular.json --strip-map runs/a1/strip_map.json --aspect-mismatch 1.25
    cellplan analyze scenarios/a2_hexagonal.json --grid 200
    cellplan emit scenarios/a1_rectangular.json --out runs/a1 --kinds cdf,mapping-grid

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

from cellplan_mcp.errors import EXIT_USAGE, PlannerError, ScenarioError, exit_code_for
from cellplan_mcp.pipeline import EMIT_KINDS, emit_plot_data, execute_pipeline, load_run, seal_manifest
from cellplan_mcp.scenario import Scenario, load_scenario
from cellplan_mcp.scmap import solve_strip_parameters

logger = logging.getLogger("CellPlanMCP")


def _kinds(value: str) -> List[str]:
    kinds = [k.strip() for k in value.split(",") if k.strip()]
    unknown = [k for k in kinds if k not in EMIT_KINDS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown plot kind(s) {unknown}; choose from {', '.join(EMIT_KINDS)}")
    return kinds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cellplan", description="Conformal-map cellular network planner")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log solver iterations")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve-map", help="Solve the strip map of the scenario polygon")
    solve.add_argument("scenario", help="Scenario JSON file")
    solve.add_argument("--out", help="Output directory")

    plan = sub.add_parser("plan", help="Run all four planning phases")
    plan.add_argument("scenario", help="Scenario JSON file")
    plan.add_argument("--out", help="Output directory (default: $CELLPLAN_OUT_DIR/<name>)")
    plan.add_argument("--seed", type=int, help="Seed for the Monte-Carlo checks")
    plan.add_argument("--grid", type=int, help="Partition and density grid resolution")
    plan.add_argument("--emit", type=_kinds, default=[], help=f"Comma-separated plot data: {', '.join(EMIT_KINDS)}")
    plan.add_argument("--strip-map", help="Reuse a strip map JSON written by an earlier run")
    plan.add_argument("--aspect-mismatch", type=float, help="Scale the canonical aspect away from the module")

    analyze = sub.add_parser("analyze", help="Demand and map phases with conservation checks")
    analyze.add_argument("scenario", help="Scenario JSON file")
    analyze.add_argument("--out", help="Output directory")
    analyze.add_argument("--seed", type=int, help="Seed for the Monte-Carlo checks")
    analyze.add_argument("--grid", type=int, help="Density grid resolution")
    analyze.add_argument("--strip-map", help="Reuse a strip map JSON written by an earlier run")

    emit = sub.add_parser("emit", help="Write plot data from an earlier run")
    emit.add_argument("scenario", help="Scenario JSON file")
    emit.add_argument("--out", help="Run directory")
    emit.add_argument("--kinds", type=_kinds, required=True, help=f"Comma-separated: {', '.join(EMIT_KINDS)}")
    return parser


def _with_overrides(scenario: Scenario, args: argparse.Namespace) -> Scenario:
    updates: Dict[str, Any] = {}
    if getattr(args, "strip_map", None):
        updates["strip_map"] = args.strip_map
    mismatch = getattr(args, "aspect_mismatch", None)
    if mismatch is not None:
        if not mismatch > 0:
            raise ScenarioError(f"Aspect mismatch must be positive, got {mismatch}")
        updates["aspect_mismatch"] = mismatch
    return scenario.model_copy(update=updates) if updates else scenario


def _solve_map(args: argparse.Namespace) -> Dict[str, Any]:
    scenario = load_scenario(args.scenario)
    sm = solve_strip_parameters(scenario.quadrilateral())
    out = scenario.resolved_out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = sm.save(out / "strip_map.json")
    return {
        "strip_map": str(path),
        "module": sm.module,
        "strip_length": sm.strip_length,
        "residual": sm.residual,
        "warnings": list(sm.warnings),
    }


def _plan(args: argparse.Namespace) -> Dict[str, Any]:
    scenario = _with_overrides(load_scenario(args.scenario), args)
    run = execute_pipeline(scenario, args.out, args.seed, args.grid, args.emit)
    summary = run.manifest.to_dict()
    summary.pop("artifacts")
    summary["out_dir"] = str(run.out_dir)
    return summary


def _analyze(args: argparse.Namespace) -> Dict[str, Any]:
    scenario = _with_overrides(load_scenario(args.scenario), args)
    if not scenario.physical:
        raise ScenarioError(f"Scenario '{scenario.name}' has no physical polygon to analyze")
    run = execute_pipeline(scenario, args.out, args.seed, args.grid, stop_after="map")
    analysis = {
        "module": run.manifest.module,
        "checks": run.manifest.checks,
        "warnings": run.manifest.warnings,
    }
    (run.out_dir / "analysis.json").write_text(json.dumps(analysis, indent=2))
    seal_manifest(run)
    return analysis


def _emit(args: argparse.Namespace) -> Dict[str, Any]:
    scenario = load_scenario(args.scenario)
    run = load_run(scenario, args.out)
    paths = [emit_plot_data(run, kind) for kind in args.kinds]
    seal_manifest(run)
    return {"emitted": [str(p) for p in paths]}


COMMANDS = {"solve-map": _solve_map, "plan": _plan, "analyze": _analyze, "emit": _emit}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        result = COMMANDS[args.command](args)
    except PlannerError as e:
        logger.error(f"Error running {args.command}: {str(e)}")
        print(f"Error: {e}", file=sys.stderr)
        return exit_code_for(e)
    except OSError as e:
        logger.error(f"Error running {args.command}: {str(e)}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
