"""``dietcl run | grid | oracle | export``."""

from __future__ import annotations

import argparse
import logging
import sys

from dietcl import __version__
from dietcl.commands import EXPORT_KINDS, cmd_export, cmd_grid, cmd_oracle, cmd_run
from dietcl.config import read_config
from dietcl.errors import DietError


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dietcl", description="Class-incremental learning with warm-up coresets.")
    ap.add_argument("--version", action="version", version=f"dietcl {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one config and write its run directory")
    p.add_argument("-c", "--config", required=True)
    p = sub.add_parser("grid", help="run a sweep and write results.csv / summary.csv")
    p.add_argument("-c", "--config", required=True)
    p = sub.add_parser("oracle", help="compare greedy herding/graphcut with exhaustive search")
    p.add_argument("-i", "--instance", required=True)
    p = sub.add_parser("export", help="write plot-ready CSV from a run directory")
    p.add_argument("-r", "--run-dir", required=True)
    p.add_argument("-k", "--kind", required=True, choices=EXPORT_KINDS)
    p.add_argument("-o", "--output", help="write to this file instead of stdout")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return cmd_run(read_config(args.config))
        if args.command == "grid":
            return cmd_grid(read_config(args.config))
        if args.command == "oracle":
            return cmd_oracle(args.instance)
        return cmd_export(args.run_dir, args.kind, args.output)
    except DietError as exc:
        print(f"dietcl {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
