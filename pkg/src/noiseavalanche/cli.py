"""Command line: ``noiseavalanche run``, ``noiseavalanche compare``, ``noiseavalanche presets``."""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .errors import ChainError
from .scenarios import KINDS, METHODS, PRESETS, build_scenario, load_config, run
from .series import compare, read_series


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="noiseavalanche", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write tables plus manifest.json")
    r.add_argument("--scenario", choices=KINDS)
    r.add_argument("--method", choices=METHODS)
    r.add_argument("--config", help="TOML config, or a manifest.json to rerun")
    r.add_argument("--realizations", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--out")
    r.add_argument("--quiet", action="store_true", help="no progress on stderr")

    c = sub.add_parser("compare", help="z-scores of g2 between two tables")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--tolerance", type=float, default=3.0, help="threshold in combined standard errors")
    c.add_argument("--min-fraction", type=float, default=0.95)
    c.add_argument("--atol", type=float, default=0.0, help="absolute slack when neither side has errors")

    sub.add_parser("presets", help="print preset parameters as JSON")
    return p


def _cmd_run(args) -> int:
    config = load_config(args.config) if args.config else None
    sc = build_scenario(
        args.scenario,
        config,
        method=args.method,
        realizations=args.realizations,
        seed=args.seed,
        workers=args.workers,
        out=args.out,
    )
    manifest = run(sc, quiet=args.quiet)
    if not args.quiet:
        for w in manifest["warnings"]:
            print(f"warning: {w}", file=sys.stderr)
    print(json.dumps({"out": sc.out, "outputs": manifest["outputs"], "wall_time_s": manifest["wall_time_s"]}))
    return 0


def _cmd_compare(args) -> int:
    report = compare(read_series(args.a), read_series(args.b), args.tolerance, args.min_fraction, args.atol)
    print(json.dumps(report.summary(), indent=2))
    return 0 if report.passed else 1


def _error_record(exc, code) -> None:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record), file=sys.stderr)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        print(json.dumps(PRESETS, indent=2, default=str))
        return 0
    except ChainError as exc:
        _error_record(exc, exc.exit_code)
        return exc.exit_code
    except OSError as exc:
        _error_record(exc, 4)
        return 4
