"""Command-line entry point.

Subcommands:
    simulate            run a fixed-time or rule controller and report metrics
    imitate             imitation stage only (expert-labeled pre-training)
    train               full co-training (imitation stage then reinforcement)
    evaluate            score any controller over evaluation episodes
    inspect-checkpoint  list the arrays stored in a checkpoint file

Exit codes: 0 success, 1 bad configuration or usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import re
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, ExperimentSpec, apply_config, parse_config_file
from .harness import (
    co_train,
    evaluate,
    imitate_only,
    resume_train,
    simulate,
)
from .net import inspect_checkpoint


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argparse that reports bad usage through exit code 1."""

    def error(self, message):
        raise _UsageError(message)


def _add_run_flags(p: _Parser) -> None:
    p.add_argument("--config", metavar="FILE", help="key=value overrides file")
    p.add_argument("--seed", type=int, metavar="N", help="experiment seed")
    p.add_argument("--flow", metavar="NAME",
                   help="flow program: low, middle, high, mutable, unbalanced")
    p.add_argument("--grid", metavar="RxC", help="grid shape, e.g. 2x2")
    p.add_argument("--controller", metavar="NAME",
                   help="fixed20, fixed40, rule, il-only, dr, dri")
    p.add_argument("--out", metavar="DIR", help="run directory")
    p.add_argument("--episodes", type=int, metavar="N",
                   help="episode count for this command")


def build_parser() -> _Parser:
    parser = _Parser(
        prog="gridsignal",
        description=(
            "Grid traffic-signal laboratory: deterministic microsimulation, "
            "imitation pre-training, and actor-critic fine-tuning."
        ),
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("simulate", help="run a baseline controller")
    _add_run_flags(p)

    p = sub.add_parser("imitate", help="imitation stage only")
    _add_run_flags(p)

    p = sub.add_parser("train", help="co-train a controller")
    _add_run_flags(p)
    p.add_argument("--resume", action="store_true",
                   help="continue from the run directory checkpoint")

    p = sub.add_parser("evaluate", help="score a controller")
    _add_run_flags(p)
    p.add_argument("--ckpt", metavar="FILE",
                   help="checkpoint path (default: <out>/checkpoint.ckpt)")

    p = sub.add_parser("inspect-checkpoint", help="list checkpoint contents")
    p.add_argument("path", metavar="FILE")
    return parser


def _parse_grid(text: str) -> tuple[int, int]:
    match = re.fullmatch(r"(\d+)x(\d+)", text)
    if not match:
        raise ConfigError(f"grid must look like RxC, e.g. 2x2, got {text!r}")
    rows, cols = int(match.group(1)), int(match.group(2))
    if rows < 1 or cols < 1:
        raise ConfigError(f"grid dimensions must be at least 1x1, got {text!r}")
    return rows, cols


def _spec_from_args(args) -> ExperimentSpec:
    spec = ExperimentSpec()
    if args.config:
        try:
            mapping = parse_config_file(args.config)
        except OSError as err:
            raise ConfigError(f"cannot read config file: {err}") from None
        spec = apply_config(spec, mapping)
    overrides: dict[str, str] = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.flow:
        overrides["flow.name"] = args.flow
    if args.controller:
        overrides["controller"] = args.controller
    if args.grid:
        rows, cols = _parse_grid(args.grid)
        overrides["grid.rows"] = str(rows)
        overrides["grid.cols"] = str(cols)
    if args.episodes is not None:
        if args.episodes < 1:
            raise ConfigError("--episodes must be at least 1")
        key = "rl.episodes" if args.command in ("train",) else "eval.episodes"
        overrides[key] = str(args.episodes)
    spec = apply_config(spec, overrides)
    if args.out:
        spec = replace(spec, out=Path(args.out))
    return spec.resolved()


def _dispatch(args) -> int:
    if args.command == "inspect-checkpoint":
        entries = inspect_checkpoint(args.path)
        total = 0
        for name, shape in entries:
            size = 1
            for d in shape:
                size *= d
            total += size
            dims = "x".join(str(d) for d in shape) if shape else "scalar"
            print(f"{name:<12} {dims}")
        print(f"total parameters: {total}")
        return 0

    spec = _spec_from_args(args)
    if args.command == "simulate":
        report = simulate(spec)
        sys.stdout.write(report["summary"])
        return 0
    if args.command == "imitate":
        result = imitate_only(spec)
        acc = result["stage1_acc"]
        print(
            f"imitation stage done: {result['stage1_rounds']} rounds, "
            f"final accuracy {acc:.4f}" if acc is not None
            else "imitation stage done: 0 rounds"
        )
        print(f"artifacts in {spec.out}")
        return 0
    if args.command == "train":
        if args.resume:
            result = resume_train(spec.out, episodes=args.episodes)
        else:
            result = co_train(spec)
        print(
            f"training done: {result['stage1_rounds']} imitation rounds, "
            f"{result['rl_episodes']} reinforcement episodes"
        )
        print(f"checkpoint at {result['checkpoint']}")
        return 0
    if args.command == "evaluate":
        report = evaluate(spec, checkpoint=args.ckpt)
        sys.stdout.write(report["summary"])
        return 0
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"gridsignal: error: {err}\n")
        return 1
    except SystemExit as exc:  # argparse --help
        code = exc.code
        return 0 if code in (0, None) else 1
    if args.command is None:
        sys.stderr.write(parser.format_usage())
        sys.stderr.write("gridsignal: error: a command is required\n")
        return 1
    try:
        return _dispatch(args)
    except ConfigError as err:
        sys.stderr.write(f"gridsignal: config error: {err}\n")
        return 1
    except KeyboardInterrupt:
        sys.stderr.write("gridsignal: interrupted\n")
        return 2
    except Exception as err:
        sys.stderr.write(f"gridsignal: error: {err}\n")
        return 2


def console() -> None:
    sys.exit(main())
