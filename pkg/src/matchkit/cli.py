"""Command-line interface.

Subcommands map onto the module entry points:

    solve             full pipeline for a config file
    check-nestedness  split thresholds and the nestedness report only
    oracle            discrete assignment solve with certificates
    price             hedonic price schedule for a pricing-capable problem
    example NAME      run a named preset (example1, example2, example3,
                      rc, hedonic_disks, pseudo_index)
    twist-check       sampled twist diagnostic for the configured surplus

Exit codes: 0 success, 2 configuration error, 3 solver infeasibility,
4 oracle mismatch beyond tolerance.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config, validate_config
from .errors import (ConfigurationError, InconsistencyError, InfeasibleError,
                     MatchkitError, OracleMismatchError)
from . import runner

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_ORACLE = 4


def _common(parser: argparse.ArgumentParser, config_required: bool = True):
    parser.add_argument("--config", required=config_required,
                        help="path to a JSON run configuration")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="oracle seed")
    parser.add_argument("--grid", type=int, default=None, help="y-grid size")
    parser.add_argument("--atoms", type=int, default=None,
                        help="enable the oracle with this many atoms")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="matchkit",
        description="Multi-to-one dimensional matching solver and oracle")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("solve", help="full solve pipeline"))
    _common(sub.add_parser("check-nestedness", help="nestedness diagnostics only"))
    _common(sub.add_parser("oracle", help="discrete oracle solve"))
    _common(sub.add_parser("price", help="hedonic price schedule"))
    _common(sub.add_parser("twist-check", help="twist condition diagnostic"))

    ex = sub.add_parser("example", help="run a named preset")
    ex.add_argument("name", help="preset name")
    _common(ex, config_required=False)
    return parser


def _load(args) -> dict:
    if getattr(args, "config", None):
        return load_config(args.config)
    cfg = {"problem": {"preset": args.name}}
    validate_config(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            info = runner.run(_load(args), out=args.out, seed=args.seed,
                              grid=args.grid, atoms=args.atoms)
            print(f"solve complete: verdicts={info['verdicts']} -> {info['outdir']}")
        elif args.command == "check-nestedness":
            info = runner.run_nestedness_only(_load(args), out=args.out,
                                              grid=args.grid)
            print(f"nestedness verdict: {info['verdict']} -> {info['outdir']}")
        elif args.command == "oracle":
            info = runner.run_oracle_only(_load(args), out=args.out,
                                          seed=args.seed, atoms=args.atoms)
            print(f"oracle solved: duality_gap={info['duality_gap']:.3e} "
                  f"-> {info['outdir']}")
        elif args.command == "price":
            cfg = _load(args)
            info = runner.run(cfg, out=args.out, seed=args.seed,
                              grid=args.grid, atoms=None, emit_grid=False)
            print(f"price schedule emitted -> {info['outdir']}")
        elif args.command == "twist-check":
            info = runner.run_twist_check(_load(args), out=args.out)
            verdict = "holds" if info["holds"] else "fails"
            print(f"twist condition {verdict} -> {info['outdir']}")
        elif args.command == "example":
            cfg = _load(args)
            info = runner.run(cfg, out=args.out, seed=args.seed,
                              grid=args.grid, atoms=args.atoms)
            print(f"preset {args.name}: verdicts={info['verdicts']} "
                  f"-> {info['outdir']}")
    except (ConfigurationError,) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as err:
        print(f"solver infeasibility: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (OracleMismatchError, InconsistencyError) as err:
        print(f"oracle mismatch: {err}", file=sys.stderr)
        return EXIT_ORACLE
    except MatchkitError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
