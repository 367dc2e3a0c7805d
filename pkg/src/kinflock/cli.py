"""Command line entry point: ``kinflock {single,sweep,decay,conserve,inspect}``.

Exit codes: 0 pass, 2 invariant violation, 3 solver error, 4 config error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import ConfigError, InvariantViolation, KinFlockError
from .runner import run_conservation_suite, run_decay_study, run_epsilon_sweep, run_single
from .snapshot import SnapshotError, read_header

EXIT_OK, EXIT_VIOLATION, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4

_EXPERIMENT = {"single": "single_run", "sweep": "epsilon_sweep", "decay": "decay_study",
               "conserve": "conservation"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kinflock", description="kinetic flocking + fluid simulator")
    sub = p.add_subparsers(dest="command", required=True)
    for name in _EXPERIMENT:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat YAML file")
        s.add_argument("--out", help="output directory")
        s.add_argument("--threads", type=int, default=1, help="worker processes (sweep)")
        s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    s = sub.add_parser("inspect")
    s.add_argument("snapshot")
    return p


def _status_code(status: str) -> int:
    return {"pass": EXIT_OK, "violation": EXIT_VIOLATION, "solver_error": EXIT_SOLVER}.get(status, EXIT_SOLVER)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "inspect":
        try:
            print(json.dumps(read_header(args.snapshot), indent=2, sort_keys=True))
        except (OSError, SnapshotError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    try:
        cfg = load_config(_EXPERIMENT[args.command], args.config, args.override, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "single":
            res = run_single(cfg)
        elif args.command == "sweep":
            res = run_epsilon_sweep(cfg, threads=max(1, args.threads))
        elif args.command == "decay":
            res = run_decay_study(cfg)
        else:
            res = run_conservation_suite(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except KinFlockError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    status = res.get("status", "pass")
    print(f"{cfg.experiment}: {status}")
    for v in res.get("violations", []):
        print(f"  {v}")
    if res.get("error"):
        print(f"  {res['error']}")
    return _status_code(status)


if __name__ == "__main__":
    sys.exit(main())
