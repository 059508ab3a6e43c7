#!/usr/bin/env python3
import sys
from pathlib import Path

if __package__ is None and not getattr(sys, 'frozen', False):  # type: ignore
    # direct call of __main__.py
    import os.path
    path = os.path.realpath(os.path.abspath(__file__))
    sys.path.insert(0, os.path.dirname(os.path.dirname(path)))


import logging
from argparse import (ArgumentParser, ArgumentTypeError, BooleanOptionalAction,
                      Namespace)
from typing import Any, Optional

from rich.console import Console

from searchbc.config import Config
from searchbc.evaluation.harness import BASELINE_KINDS
from searchbc.log import Logger
from searchbc.main import Main
from searchbc.search.index import parse_threshold

VERSION = "0.1.0"


def positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise ArgumentTypeError(f"expected an integer, got {value!r}")
    if number < 1:
        raise ArgumentTypeError(f"must be >= 1, got {number}")
    return number


def non_negative_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise ArgumentTypeError(f"expected an integer, got {value!r}")
    if number < 0:
        raise ArgumentTypeError(f"must be >= 0, got {number}")
    return number


def threshold(value: str) -> str:
    try:
        parse_threshold(value)
    except ValueError as e:
        raise ArgumentTypeError(f"expected a non-negative number or auto:q, got {value!r} ({e})")
    return value


def counts(value: str) -> list[int]:
    parsed = [positive_int(v) for v in value.split(',') if v.strip()]
    if not parsed:
        raise ArgumentTypeError("expected a comma separated list of counts")
    if any(b <= a for a, b in zip(parsed, parsed[1:])):
        raise ArgumentTypeError(f"counts must be strictly increasing, got {value}")
    return parsed


def subset_arg(value: str) -> tuple[int, int]:
    """N or N:seed"""
    count, _, seed = value.partition(':')
    return positive_int(count), non_negative_int(seed) if seed else 0


parser = ArgumentParser(prog="searchbc", description="Search-based behavioral cloning experiments")
parser.add_argument("-v", "--version",
                    action="version",
                    version=f"%(prog)s {VERSION}",
                    help="Print out the program's version and exit")
parser.add_argument("--config", "-c",
                    dest="config",
                    action="store",
                    type=str,
                    help="Path to config file",
                    metavar="Path")
parser.add_argument("--debug", "-d",
                    dest="debug",
                    action="store_true",
                    help="Log at debug level")
parser.add_argument("--log", "-l",
                    dest="log",
                    action="store",
                    type=str,
                    help="Path to log file (default ./logs/log)",
                    metavar="Path")

commands = parser.add_subparsers(dest="command", metavar="command", required=True)


def suite_flags(command: ArgumentParser) -> None:
    command.add_argument("--seeds", type=positive_int, metavar="N", help="Number of environment seeds")
    command.add_argument("--episodes", type=positive_int, metavar="M", help="Episodes per seed")
    command.add_argument("--success-steps", type=positive_int, metavar="K",
                         help="Consecutive in-goal steps that count as success")
    command.add_argument("--jobs", type=positive_int, metavar="N",
                         help="Worker threads (falls back to SBC_JOBS, then 1)")
    command.add_argument("--report", type=Path, metavar="Path", help="Write the JSON report here instead of stdout")
    command.add_argument("--timing", action=BooleanOptionalAction,
                         help="Add wall-clock timing fields to the report (off by default)")


def controller_flags(command: ArgumentParser) -> None:
    command.add_argument("--warmup", type=non_negative_int, metavar="W", help="Steps before the first search")
    command.add_argument("--max-steps", dest="max_steps", type=positive_int, metavar="T",
                         help="Most actions copied per search")
    command.add_argument("--div-threshold", dest="div_threshold", type=threshold, metavar="X|auto:q",
                         help="Divergence threshold, or auto-calibrate at quantile q")


record = commands.add_parser("record", help="Record expert demonstrations")
record.add_argument("--demos", dest="n_demos", type=positive_int, metavar="N", help="Number of demonstrations")
record.add_argument("--seed", type=non_negative_int, metavar="S", help="Recording seed")
record.add_argument("--out", type=Path, metavar="Path", help="Output .sbc or .jsonl file (default demos.path)")

evaluate = commands.add_parser("eval", help="Evaluate search-based behavioral cloning")
evaluate.add_argument("--demos", type=Path, metavar="Path", help="Demonstration file (default demos.path)")
evaluate.add_argument("--subset", type=subset_arg, metavar="N[:seed]",
                      help="Evaluate on N demonstrations (leading prefix, or a random subset by seed)")
suite_flags(evaluate)
controller_flags(evaluate)

ablate = commands.add_parser("ablate", help="Sweep the number of demonstrations")
ablate.add_argument("--demos", type=Path, metavar="Path", help="Demonstration file (default demos.path)")
ablate.add_argument("--counts", type=counts, metavar="10,25,50,100", help="Demonstration counts")
ablate.add_argument("--runs", type=positive_int, metavar="R", help="Runs per count")
suite_flags(ablate)
controller_flags(ablate)

project = commands.add_parser("project", help="Project demonstration embeddings to 2-D")
project.add_argument("--demos", type=Path, metavar="Path", help="Demonstration file (default demos.path)")
project.add_argument("--out", type=Path, required=True, metavar="Path", help="Output CSV")
project.add_argument("--trace-seed", dest="trace_seed", type=non_negative_int, metavar="S",
                     help="Also trace the searches of one episode on seed S")
controller_flags(project)

baseline = commands.add_parser("baseline", help="Evaluate a reference policy")
baseline.add_argument("--kind", required=True, choices=BASELINE_KINDS, help="Baseline policy")
baseline.add_argument("--demos", type=Path, metavar="Path", help="Demonstration file (majority baseline)")
baseline.add_argument("--seed", type=non_negative_int, default=0, metavar="S", help="Policy seed")
suite_flags(baseline)

world = commands.add_parser("world", help="Print a generated world")
world.add_argument("--seed", type=non_negative_int, default=0, metavar="S", help="World seed")

convert = commands.add_parser("convert", help="Convert between .sbc and .jsonl demonstration files")
convert.add_argument("source", type=Path, metavar="IN")
convert.add_argument("target", type=Path, metavar="OUT")

init_config = commands.add_parser("init-config", help="Write the default configuration")
init_config.add_argument("path", type=Path, metavar="Path")

# flag -> (config section, key)
OVERRIDES: dict[str, tuple[str, str]] = {
    'n_demos': ('demos', 'n_demos'),
    'seeds': ('suite', 'seeds'),
    'episodes': ('suite', 'episodes'),
    'success_steps': ('suite', 'success_steps'),
    'jobs': ('suite', 'jobs'),
    'warmup': ('controller', 'warmup'),
    'max_steps': ('controller', 'max_steps'),
    'div_threshold': ('controller', 'div_threshold'),
    'counts': ('ablation', 'counts'),
    'runs': ('ablation', 'runs'),
}


def apply_overrides(config: Config, args: Namespace) -> None:
    for flag, (section, key) in OVERRIDES.items():
        value: Optional[Any] = getattr(args, flag, None)
        if value is not None:
            config.update(section, key, value)
    if args.command == 'record' and args.seed is not None:
        config.update('demos', 'seed', args.seed)
    if getattr(args, 'timing', None) is not None:
        config.update('report', 'include_timing', args.timing)


def dispatch(main: Main, args: Namespace) -> None:
    demo_file = Path(main.config.demos.path)
    match args.command:
        case 'record':
            main.record(args.out or demo_file)
        case 'eval':
            main.evaluate(args.demos or demo_file, args.report, args.subset)
        case 'ablate':
            main.ablate(args.demos or demo_file, args.report)
        case 'project':
            main.project(args.demos or demo_file, args.out, args.trace_seed)
        case 'baseline':
            main.baseline(args.kind, args.demos, args.seed, args.report)
        case 'world':
            main.world(args.seed)
        case 'convert':
            main.convert(args.source, args.target)
        case 'init-config':
            main.init_config(args.path)


def run(argv: Optional[list[str]] = None, console: Optional[Console] = None) -> int:
    args: Namespace = parser.parse_args(argv)
    console = console or Console(stderr=True)

    Logger.create_logger(verbose=args.debug, log=Path(args.log).resolve() if args.log else None, console=console)
    log = logging.getLogger(__name__)

    try:
        config = Config(Path(args.config).resolve()) if args.config else Config()
        apply_overrides(config, args)
        dispatch(Main(console), args)
    except KeyboardInterrupt:
        console.print('[red]interrupted[/red]')
        return 1
    except Exception as e:
        log.exception(f'{args.command} failed')
        console.print(f'[red]error:[/red] {e}')
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(run())
