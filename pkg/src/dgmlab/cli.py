"""Command line entry point: ``dgmlab {run,sweep,report,validate} ...``.

Exit codes: 0 all checks pass, 1 validation error, 2 runtime failure,
3 a check failed.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .experiments import convergence_study, emit_report, load_config, run_scenario
from .experiments.runner import RunManifest, StageError
from .graph_limits import ValidationError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3


def _finish(manifest: RunManifest) -> int:
    for name, passed in sorted(manifest.checks.items()):
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
    print(f"outputs: {manifest.directory}")
    return EXIT_OK if manifest.ok else EXIT_CHECK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"{args.config}: ok (scenario {cfg.name!r}, {len(cfg.sweep)} N values, {len(cfg.seeds)} seeds)")
    return EXIT_OK


def cmd_run(args) -> int:
    return _finish(run_scenario(args.config, args.outputs))


def cmd_sweep(args) -> int:
    path = convergence_study(args.config, args.outputs)
    print(f"table: {path}")
    return _finish(RunManifest.read(path.parent))


def cmd_report(args) -> int:
    text, script = emit_report(args.results_dir)
    print(text, end="")
    print(f"plot script: {script}")
    return EXIT_CHECK if "FAIL" in text else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgmlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every stage of a scenario")
    p.add_argument("config")
    p.add_argument("-o", "--outputs", help="override the output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="N-sweep convergence table (needs >= 3 N values)")
    p.add_argument("config")
    p.add_argument("-o", "--outputs", help="override the output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarise a results directory and write a plot script")
    p.add_argument("results_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate", help="parse and validate a scenario file")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StageError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
