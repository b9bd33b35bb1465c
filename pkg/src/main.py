"""
Command-line entry point for the phase-field flow optimizer.
Subcommands: run, preset, check, summarize.
Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from .checks import run_checks
from .config import Config
from .errors import ConfigError, PhaseFlowError, SolverError
from .graph import run_optimization
from .output import summarize_history
from .presets import PRESETS, load_config, preset, write_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Phase-field topology optimization of Navier-Stokes flow with adaptive meshes"
    )
    parser.add_argument(
        "--show-config",
        action="store_true",
        help="Show process-wide solver defaults and exit"
    )
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", help="Run the optimization described by a configuration file")
    run.add_argument("config", help="Flat key=value configuration file")
    run.add_argument("--resume", help="Continue from a .npz snapshot")
    run.add_argument("--out", help="Output directory (default: output.directory/output.label)")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="Override one configuration key (repeatable)")

    pre = sub.add_parser("preset", help="Run a named benchmark")
    pre.add_argument("name", choices=sorted(PRESETS))
    pre.add_argument("--out", help="Output directory (default: output.directory/<preset name>)")
    pre.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="Override one configuration key (repeatable)")

    sub.add_parser("check", help="Run the property checks on tiny meshes")

    summary = sub.add_parser("summarize", help="Print key figures of a history CSV")
    summary.add_argument("history", help="history.csv written by a run")
    return parser


def _run(config, out: Optional[str], resume: Optional[str] = None) -> int:
    output_dir = Path(out) if out else Path(config.output.directory) / config.output.label
    write_config(config, str(output_dir / "config.txt"))
    run_optimization(config, str(output_dir), resume=resume)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.show_config:
        print("Current Configuration:")
        print("-" * 30)
        for key, value in Config.get_safe_config().items():
            print(f"{key}: {value}")
        print(f"config_valid: {Config.validate_config()}")
        return EXIT_OK

    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG

    if not Config.validate_config():
        print("ERROR: Configuration validation failed!")
        return EXIT_CONFIG

    try:
        if args.command == "run":
            return _run(load_config(args.config, args.override), args.out, resume=args.resume)

        if args.command == "preset":
            overrides = [f"output.label={args.name}", *args.override]
            return _run(preset(args.name, overrides), args.out)

        if args.command == "check":
            results = run_checks()
            for result in results:
                status = "PASS" if result.passed else "FAIL"
                print(f"{status}  {result.name:<16} {result.detail}  ({result.seconds:.1f}s)")
            return EXIT_OK if all(r.passed for r in results) else EXIT_SOLVER

        if args.command == "summarize":
            for key, value in summarize_history(args.history).items():
                print(f"{key}: {value}")
            return EXIT_OK

    except ConfigError as e:
        print(f"ERROR: {e}")
        return EXIT_CONFIG
    except SolverError as e:
        print(f"ERROR: solver failure: {e}")
        return EXIT_SOLVER
    except PhaseFlowError as e:
        print(f"ERROR: {e}")
        return EXIT_SOLVER
    except KeyboardInterrupt:
        print("\nOptimization interrupted by user")
        return EXIT_SOLVER

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
