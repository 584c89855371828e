"""Command line: ``run``, ``aggregate`` and ``demo1d``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiment import ConfigError, atomic_write, load_config, run_config, summaries_from_dir
from .policy import PolicyFormatError
from .stats import aggregate


def cmd_run(config_path, jobs=1) -> int:
    try:
        config = load_config(config_path)
    except (PolicyFormatError, ConfigError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    statuses = run_config(config, str(config_path), jobs)
    aborted = [(name, msg) for name, status, msg in statuses if status == "aborted"]
    for name, msg in aborted:
        print(f"aborted: {name}: {msg}", file=sys.stderr)
    print(f"{len(statuses)} run(s) written to {config.output_dir}")
    return 1 if aborted else 0


def cmd_aggregate(results_dir, metric) -> int:
    try:
        table = aggregate(summaries_from_dir(results_dir), metric)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(results_dir)
    atomic_write(out / f"aggregate_{metric}.txt", table.to_text())
    atomic_write(out / f"aggregate_{metric}.csv", table.to_csv())
    print(table.to_text(), end="")
    return 0


def cmd_demo1d(output_path, seed=0) -> int:
    from .demo1d import curves_to_csv, demo_curves

    curves = demo_curves(seed)
    atomic_write(output_path, curves_to_csv(curves))
    print(
        f"EI choice {curves.ei_choice:+.4f}; 2-EI pair {curves.qei_pair[0]:+.4f}, {curves.qei_pair[1]:+.4f};"
        f" two-step EI choice {curves.two_step_choice:+.4f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="binoculars", description=__doc__)
    parser.add_argument("--jobs", type=int, default=1, help="concurrent runs (default 1)")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run every (function, policy, repeat) in a config file")
    p.add_argument("config")
    p = sub.add_parser("aggregate", help="tabulate final metrics of a results directory")
    p.add_argument("results_dir")
    p.add_argument("--metric", choices=("gap", "fracerr"), required=True)
    p = sub.add_parser("demo1d", help="dump the two-endpoint 1-D acquisition curves")
    p.add_argument("output")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    if args.command == "run":
        return cmd_run(args.config, args.jobs)
    if args.command == "aggregate":
        return cmd_aggregate(args.results_dir, args.metric)
    return cmd_demo1d(args.output, args.seed)
