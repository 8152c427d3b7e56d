"""Command-line front end.

    fuzzympc plan --scenario FILE --out DIR [overrides]
    fuzzympc field --scenario FILE --out DIR
    fuzzympc extract --map FILE --out DIR

``plan`` exits with 0 (goal reached), 2 (collision) or 3 (timeout); any
usage or parse error exits with 1.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .gridmap import GridParseError, parse_grid
from .planner import with_fuzzy
from .polygon import PolygonError
from .sim import EXIT_CODES, ScenarioError, emit_artifacts, load_scenario, run_scenario, write_extracted, write_field_artifacts

USAGE_ERROR = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fuzzympc", description="Fuzzy polygon constraints for MPC trajectory planning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    plan = sub.add_parser("plan", help="run a closed-loop scenario and write artifacts")
    plan.add_argument("--scenario", required=True, type=Path)
    plan.add_argument("--out", required=True, type=Path)
    plan.add_argument("--c-scale", type=float)
    plan.add_argument("--max-obstacles", type=int)
    plan.add_argument("--max-edges", type=int)
    plan.add_argument("--threshold", type=float)
    plan.add_argument("--horizon", type=int)
    plan.add_argument("--disable-constraints", action="store_true",
                      help="equivalent to --max-obstacles 0")

    fld = sub.add_parser("field", help="write the sampled obstacle field only")
    fld.add_argument("--scenario", required=True, type=Path)
    fld.add_argument("--out", required=True, type=Path)

    ext = sub.add_parser("extract", help="extract polygons from a map file")
    ext.add_argument("--map", required=True, type=Path)
    ext.add_argument("--out", required=True, type=Path)
    return parser


def _apply_overrides(scn, args):
    fuzzy = {}
    if args.c_scale is not None:
        fuzzy["c"] = args.c_scale
    if args.max_obstacles is not None:
        fuzzy["max_obstacles"] = args.max_obstacles
    if args.max_edges is not None:
        fuzzy["max_edges"] = args.max_edges
    if args.threshold is not None:
        fuzzy["threshold"] = args.threshold
    if args.disable_constraints:
        fuzzy["max_obstacles"] = 0
    planner = with_fuzzy(scn.planner, **fuzzy)
    if args.horizon is not None:
        planner = replace(planner, horizon=args.horizon)
    return replace(scn, planner=planner)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "extract":
            grid = parse_grid(args.map.read_bytes())
            print(write_extracted(grid, args.out))
            return 0
        scn = load_scenario(args.scenario)
        if args.command == "field":
            for path in write_field_artifacts(scn, args.out):
                print(path)
            return 0
        scn = _apply_overrides(scn, args)
        log = run_scenario(scn)
        emit_artifacts(log, args.out)
        print(f"outcome {log.outcome} after {len(log.records) - 1} cycles")
        return EXIT_CODES[log.outcome]
    except (ScenarioError, GridParseError, PolygonError, ValueError, OSError) as exc:
        print(f"fuzzympc: error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
