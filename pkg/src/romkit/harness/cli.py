"""Command line front end.

Each subcommand maps onto one pipeline stage; failures print a single
``category: message`` line on stderr so scripts can parse outcomes, and
the exit code distinguishes configuration mistakes (2), missing
upstream artifacts (3), and runtime failures (4).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from ..errors import (
    ConfigurationError,
    ContractViolationError,
    MissingArtifactError,
    RomkitError,
)
from . import commands
from .config import load_config

_COMMANDS = {
    "simulate": commands.cmd_simulate,
    "reduce": commands.cmd_reduce,
    "train": commands.cmd_train,
    "estimate": commands.cmd_estimate,
    "benchmark": commands.cmd_benchmark,
    "report": commands.cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="romkit",
        description="Reduced-order surrogate modeling and state estimation "
        "pipeline for the two-column capture plant.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        cmd = sub.add_parser(name, help=fn.__doc__.splitlines()[0].lower())
        cmd.add_argument("--config", required=True, help="experiment INI file")
        cmd.add_argument("--seed", type=int, help="override the base seed")
        cmd.add_argument("--out", help="override the output directory")
        cmd.add_argument(
            "--fast",
            action="store_true",
            help="use the scaled-down dataset profile",
        )
        if name == "estimate":
            cmd.add_argument(
                "--filter",
                action="append",
                choices=commands.FILTER_NAMES + ("all",),
                help="filter to run (repeatable; default pod-mlp-ekf)",
            )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, base_seed=args.seed)
        if args.out is not None:
            cfg = replace(cfg, output_dir=args.out)
        if args.fast:
            cfg = cfg.fast_profile()
        if args.command == "estimate":
            filters = tuple(args.filter) if args.filter else ("pod-mlp-ekf",)
            if "all" in filters:
                filters = commands.FILTER_NAMES
            written = commands.cmd_estimate(cfg, filters)
        else:
            written = _COMMANDS[args.command](cfg)
    except (ConfigurationError, ContractViolationError) as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 3
    except RomkitError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 4
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
