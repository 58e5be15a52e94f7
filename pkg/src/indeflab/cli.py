"""Command-line interface.

Exit codes: 0 success, 2 config rejection, 3 solver failure,
4 estimate-check failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import parse_config
from .errors import ConfigError
from .pipelines import SUBCOMMANDS, run

_EXIT_CODES = {"ok": 0, "solver-failure": 3, "estimate-failure": 4}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="indeflab",
        description=(
            "Numerical laboratory for positive-solution branches and "
            "blow-up diagnostics of superlinear indefinite elliptic problems"
        ),
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the config file")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="seed override")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        print(f"config rejected: {exc}", file=sys.stderr)
        return 2
    manifest = run(args.subcommand, config, out_dir=args.out, seed=args.seed)
    if manifest.error:
        print(f"{manifest.status}: {manifest.error}", file=sys.stderr)
    else:
        print(f"{args.subcommand}: ok ({len(manifest.files)} files)")
    return _EXIT_CODES[manifest.status]


if __name__ == "__main__":
    sys.exit(main())
