#!/usr/bin/env python3
"""Canonical load sweep report.

Computes the uniform cell load of regular lattices on the canonical torus for
a grid of base-station counts and path-loss exponents, and checks that the
load falls as either grows.

Usage:
    python3 sweep.py                          # 6.84 x 4.90 rectangle, default grid
    python3 sweep.py --cells 64,100,144       # Specific base-station counts
    python3 sweep.py --betas 3,4 --grid 120   # Coarser cell integral
    python3 sweep.py --json                   # JSON output for piping
"""

import argparse
import json
import logging
import sys

from cellplan_mcp.canonical import LinkModel
from cellplan_mcp.errors import PlannerError, exit_code_for
from cellplan_mcp.geometry import RectangleDomain
from cellplan_mcp.loadcoupling import sweep_canonical

logging.disable(logging.INFO)


def parse_list(text, cast):
    return [cast(x) for x in text.split(",") if x.strip()]


def table_of(rows):
    """{beta: {cells: alpha_c}} from sweep rows."""
    table = {}
    for r in rows:
        table.setdefault(r["beta"], {})[r["cells"]] = r["alpha_c"]
    return table


def monotonicity(table):
    """Pairs where the load fails to decrease in L (fixed beta) or beta (fixed L)."""
    issues = []
    betas = sorted(table)
    for beta in betas:
        cells = sorted(table[beta])
        for a, b in zip(cells, cells[1:]):
            la, lb = table[beta][a], table[beta][b]
            if la is not None and lb is not None and not lb < la:
                issues.append(f"beta={beta}: load at L={b} ({lb:.4f}) is not below L={a} ({la:.4f})")
    for a, b in zip(betas, betas[1:]):
        for count in sorted(set(table[a]) & set(table[b])):
            la, lb = table[a][count], table[b][count]
            if la is not None and lb is not None and not lb < la:
                issues.append(f"L={count}: load at beta={b} ({lb:.4f}) is not below beta={a} ({la:.4f})")
    return issues


def load_bar(value, width=20):
    """ASCII bar for a load in [0, 1]."""
    if value is None:
        return "?" * width
    filled = int(round(value * width))
    return "█" * filled + "░" * (width - filled)


def print_report(rows, rect, volume):
    """Print a formatted load table."""
    table = table_of(rows)
    betas = sorted(table)
    cells = sorted({r["cells"] for r in rows})
    print(f"\nCANONICAL LOAD SWEEP ({rect.width:g} x {rect.height:g}, V={volume:g})")
    print("=" * (8 + 10 * len(betas) + 22))
    print(f"{'L':>6}  " + "".join(f"{'beta=' + format(b, 'g'):>10}" for b in betas) + "  Load (first beta)")
    print("-" * (8 + 10 * len(betas) + 22))
    for count in cells:
        values = [table[b].get(count) for b in betas]
        text = "".join(f"{'infeasible' if v is None else format(v, '.4f'):>10}" for v in values)
        print(f"{count:>6}  {text}  {load_bar(values[0])}")
    print("-" * (8 + 10 * len(betas) + 22))

    issues = monotonicity(table)
    if issues:
        print("\nORDERING VIOLATIONS:")
        for issue in issues:
            print(f"  {issue}")
    else:
        print("\nLoad decreases with L at every beta and with beta at every L.")


def main():
    parser = argparse.ArgumentParser(description="Canonical load sweep")
    parser.add_argument("--width", type=float, default=6.84, help="Rectangle width (default: 6.84)")
    parser.add_argument("--height", type=float, default=4.90, help="Rectangle height (default: 4.90)")
    parser.add_argument("--cells", type=str, default="64,100,144,196,256,324,400", help="Comma-separated L values")
    parser.add_argument("--betas", type=str, default="2.5,3,3.5,4", help="Comma-separated path-loss exponents")
    parser.add_argument("--tiling", choices=["hexagonal", "rectangular"], default="hexagonal")
    parser.add_argument("--session", type=float, default=120.0, help="Mean session size E{mu} (default: 120)")
    parser.add_argument("--interarrival", type=float, default=0.05, help="Mean inter-arrival time (default: 0.05)")
    parser.add_argument("--grid", type=int, default=128, help="Samples per side of the lattice period (default: 128)")
    parser.add_argument("--json", action="store_true", help="Output as JSON")
    args = parser.parse_args()

    try:
        rect = RectangleDomain(args.width, args.height)
        volume = args.session / args.interarrival
        rows = sweep_canonical(
            rect,
            parse_list(args.cells, int),
            parse_list(args.betas, float),
            volume,
            LinkModel(),
            args.tiling,
            args.grid,
        )
    except PlannerError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(exit_code_for(e))

    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print_report(rows, rect, volume)


if __name__ == "__main__":
    main()
