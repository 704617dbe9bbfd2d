"""Route and coverage path from ground-truth waypoints, no network involved.

    python demos/oracle_pipeline.py [out_dir]

Generates three 256 px fields, plans each one from its truth waypoints,
then scores a plan with one corridor removed to show how coverage reacts.
Overlays are written as PNG files next to the JSON artifacts.
"""
import json
import sys
from pathlib import Path

from deepway.cli import main
from deepway.core import Waypoint
from deepway.datagen import FieldParams, generate_field
from deepway.metrics import coverage_score
from deepway.order import RouteOrder
from deepway.plan import plan_route
from deepway.render import save_overlay


def run(*argv):
    code = main([str(a) for a in argv])
    if code:
        sys.exit(code)


if __name__ == "__main__":
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "oracle_run")
    run("gen", "--seed", 7, "--count", 3, "--size", 256, "--out", out / "fields")
    for i in range(3):
        run("plan", "--mask", out / "fields" / f"mask_{i:05d}.png",
            "--oracle", out / "fields" / f"truth_{i:05d}.json", "--out", out / f"plan_{i}")
        cov = json.loads((out / f"plan_{i}" / "coverage.json").read_text())
        print(f"field {i}: {cov['covered_rows']}/{cov['total_rows']} rows covered")

    # a field planned without its third corridor
    field = generate_field(11, FieldParams.scaled(256))
    pairs = [p for c, p in enumerate(zip(field.waypoints_a, field.waypoints_b)) if c != 2]
    seq, groups = [], []
    for i, (a, b) in enumerate(pairs):
        seq += [a, b] if i % 2 == 0 else [b, a]
        groups += ["A", "B"] if i % 2 == 0 else ["B", "A"]
    order = RouteOrder([Waypoint(x, y, 1.0) for x, y in seq], groups, field.angle)
    plan = plan_route(field.grid, order)
    report = coverage_score(field.grid, plan, order, field.n_rows)
    print(f"one corridor skipped: {report.covered_rows}/{report.total_rows} rows covered")
    for v in report.verdicts:
        if not v.covered:
            print("  ", v.reason)
    save_overlay(out / "skipped.png", field.grid, order=order, plan=plan)
