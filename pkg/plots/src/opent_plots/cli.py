"""Batch figure rendering: `opent-plots render --figure ID --runs DIR[,DIR] --out PATH`."""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURE_IDS, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opent-plots", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure from completed run directories")
    p.add_argument("--figure", required=True, choices=FIGURE_IDS)
    p.add_argument("--runs", required=True, help="comma-separated run directories")
    p.add_argument("--out", help="output image path (required unless --dry-run)")
    p.add_argument(
        "--dry-run",
        action="store_true",
        help="list the CSV cells the figure would consume instead of rendering",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    run_dirs = [d for d in args.runs.split(",") if d]
    if not args.dry_run and not args.out:
        print("error: --out is required unless --dry-run", file=sys.stderr)
        return 2
    try:
        sources, warnings = render(args.figure, run_dirs, args.out, dry_run=args.dry_run)
    except SchemaError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.dry_run:
        for s in sources:
            print(s)
    return 0


if __name__ == "__main__":
    sys.exit(main())
