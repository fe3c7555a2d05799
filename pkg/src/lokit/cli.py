"""Command line scenario runner.

    lokit run SCENARIO [--trace FILE] [--snapshot FILE] [--statements FILE]
                       [--check] [--max-events N] [--seed N]
    lokit snapshot SCENARIO [--seed N] [--max-events N]
    lokit statements SCENARIO [--seed N] [--max-events N]

Exit status: 0 success, 1 invariant violation or unfinished run, 2 bad input.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .checks import check_system
from .scenario import ScenarioError, load_scenario
from .simnet import SimError

log = logging.getLogger("lokit")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _write(path, lines, default=None):
    text = "".join(line + "\n" for line in lines)
    if path is None or path == "-":
        (default or sys.stdout).write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _simulate(args):
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    system = scenario.build(record=True)
    finished = system.run(args.max_events)
    return scenario, system, finished


def _summary(system):
    for rec in system.records():
        yield f"# {rec.client} #{rec.seq} {rec.op} -> {rec.outcome}"


def cmd_run(args) -> int:
    scenario, system, finished = _simulate(args)
    _write(args.trace, system.world.trace_lines())
    if args.snapshot:
        _write(args.snapshot, system.snapshot_lines())
    if args.statements:
        _write(args.statements, system.statement_lines())
    for line in _summary(system):
        print(line, file=sys.stderr)
    status = EXIT_OK
    if not finished:
        print(f"run stopped after {args.max_events} events without finishing", file=sys.stderr)
        status = EXIT_FAIL
    if args.check:
        for result in check_system(system, fault_free=scenario.fault_free):
            print(result.line(), file=sys.stderr)
            if not result.ok:
                status = EXIT_FAIL
    return status


def cmd_dump(args) -> int:
    _, system, finished = _simulate(args)
    lines = system.snapshot_lines() if args.command == "snapshot" else system.statement_lines()
    _write(None, lines)
    return EXIT_OK if finished else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lokit", description="Run banking scenarios "
                                     "on the simulated coordination kernel.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", help="scenario file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--max-events", type=int, metavar="N",
                       help="stop after N simulation events")

    run = sub.add_parser("run", help="execute a scenario and print its trace")
    common(run)
    run.add_argument("--trace", metavar="FILE", help="write the trace here instead of stdout")
    run.add_argument("--snapshot", metavar="FILE", help="dump replica ledgers")
    run.add_argument("--statements", metavar="FILE", help="dump statement lists")
    run.add_argument("--check", action="store_true", help="run the invariant suite")
    run.set_defaults(func=cmd_run)

    for name, text in (("snapshot", "print replica ledgers after the run"),
                       ("statements", "print statement lists after the run")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.set_defaults(func=cmd_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "max_events", None) is not None and args.max_events < 0:
        parser.error("--max-events must not be negative")
    try:
        return args.func(args)
    except (ScenarioError, OSError) as exc:
        print(f"lokit: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimError as exc:
        print(f"lokit: simulation error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
