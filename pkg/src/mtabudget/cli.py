"""Command-line entry point: ``attribute``, ``allocate``, ``simulate``, ``report``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import formats
from .allocation import AllocationConfig, AllocationError, daily_allocation
from .attribution import Method, Order
from .core import WindowConfig, format_money, read_log, write_log
from .pipeline import PipelineError, ShardPlan, default_workers, run_both
from .report import (
    read_report_json,
    summarize,
    write_budget_share_csv,
    write_daily_csv,
    write_report_json,
)
from .simulator import ScenarioError, default_market, load_scenario, run_experiment

logger = logging.getLogger("mtabudget")

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # Accepted both before and after the subcommand; SUPPRESS keeps a
    # subcommand-level default from overwriting a value given up front.
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--t-action", type=_positive_int, default=d(7), help="action window, days")
    p.add_argument("--t-association", type=_positive_int, default=d(30),
                   help="association window, days")
    p.add_argument("--shards", type=_positive_int, default=d(None),
                   help="user shards (default: logical CPU count)")
    p.add_argument("--seed", type=int, default=d(None))
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtabudget", parents=[_global_flags(False)],
                                     description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags(True)

    p = sub.add_parser("attribute", parents=[common], help="attribute actions in an event log")
    p.add_argument("log", type=Path)
    p.add_argument("-o", "--out-dir", type=Path, required=True)
    p.add_argument("--attribution", choices=[m.value for m in Method], default="mta")
    p.add_argument("--order", choices=[o.value for o in Order], default="first")
    p.add_argument("--as-of", type=int, default=None,
                   help="window end, epoch seconds (default: latest event)")
    p.add_argument("--workers", type=_positive_int, default=None)
    p.add_argument("--max-malformed-ratio", type=float, default=0.05)

    p = sub.add_parser("allocate", parents=[common], help="plan next-day line-item budgets")
    p.add_argument("attribution", type=Path, help="attribution result file")
    p.add_argument("--states", type=Path, default=None, help="yesterday budget/spend per line item")
    p.add_argument("--budget", type=int, required=True, help="IO daily budget, minor units")
    p.add_argument("--io", default=None, help="insertion order (required if several)")
    p.add_argument("-o", "--out", type=Path, required=True)
    p.add_argument("--explore-rate", type=float, default=0.10)
    p.add_argument("--learning-budget", type=int, default=None)
    p.add_argument("--learning-budget-cap", type=int, default=None)
    p.add_argument("--min-budget", type=int, default=0)

    p = sub.add_parser("simulate", parents=[common], help="run the LTA vs MTA experiment")
    p.add_argument("scenario", type=Path, nargs="?", default=None,
                   help="YAML scenario (default: built-in retargeting scenario)")
    p.add_argument("--days", type=_positive_int, default=None)
    p.add_argument("-o", "--out-dir", type=Path, required=True)
    p.add_argument("--write-logs", action="store_true", help="also write per-arm event logs")

    p = sub.add_parser("report", parents=[common], help="print a report or result file")
    p.add_argument("path", type=Path, help="report.json from simulate, or an attribution file")
    return parser


def cmd_attribute(args) -> int:
    corpus = read_log(args.log)
    rep = corpus.report
    if rep.malformed:
        print(f"warning: {rep.malformed} malformed line(s) of {rep.lines}", file=sys.stderr)
        for lineno, err in rep.errors[:10]:
            print(f"  line {lineno}: {err}", file=sys.stderr)
    if rep.malformed_ratio > args.max_malformed_ratio:
        print(f"error: malformed ratio {rep.malformed_ratio:.3f} exceeds "
              f"{args.max_malformed_ratio}", file=sys.stderr)
        return EXIT_ERROR
    users = list(corpus.histories.values())
    as_of = args.as_of
    if as_of is None:
        as_of = max((e.timestamp for h in users for e in (*h.touch_points, *h.actions)), default=0)
    w = WindowConfig(as_of, args.t_action, args.t_association)
    shards = ShardPlan(args.shards or default_workers())
    try:
        out = run_both(users, w, shards, Order(args.order), Method(args.attribution), args.workers)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    args.out_dir.mkdir(parents=True, exist_ok=True)
    formats.write_weights(args.out_dir / "weights.jsonl", out.weights, corpus.catalog)
    formats.write_results(args.out_dir / "attribution.jsonl", out.results, corpus.catalog)
    n_attr = sum(r.n_sequences for r in out.results.values())
    print(f"actions attributed: {n_attr}  unattributable: {out.unattributable}")
    for adv, r in out.results.items():
        for li, a in r.lines.items():
            print(f"  {adv} {li}: attributed {a.attributed:.4f}  value {format_money(a.value)}  "
                  f"cost {format_money(a.cost)}  roi {a.roi:.4f}")
    return EXIT_OK


def cmd_allocate(args) -> int:
    if args.budget < 0:
        print("error: --budget must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    results, ios = formats.read_results(args.attribution)
    roi = {li: a.roi for r in results.values() for li, a in r.lines.items()}
    by_io: dict[str, list[str]] = {}
    for li in roi:
        by_io.setdefault(ios.get(li, ""), []).append(li)
    io = args.io
    if io is None:
        if len(by_io) > 1:
            print(f"error: several insertion orders present, pass --io ({', '.join(sorted(by_io))})",
                  file=sys.stderr)
            return EXIT_USAGE
        io = next(iter(by_io), "")
    if io not in by_io:
        print(f"error: no line items for io {io!r}", file=sys.stderr)
        return EXIT_USAGE
    states = formats.read_states(args.states) if args.states else []
    if args.states is None:
        print("no state file: every line item is treated as new", file=sys.stderr)
    cfg = AllocationConfig(args.explore_rate, args.learning_budget, 0.05,
                           args.learning_budget_cap, args.min_budget)
    try:
        plan = daily_allocation(args.budget, {li: roi[li] for li in by_io[io]}, states,
                                by_io[io], cfg, io)
    except AllocationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    formats.write_plans(args.out, [plan])
    print(f"io {io}: budget {format_money(plan.total_budget)}, "
          f"redistributed {format_money(plan.redistributed)}")
    for rank, li in enumerate(plan.order):
        hit = " (cap)" if li in plan.caps_hit else ""
        print(f"  {rank + 1}. {li}: roi {plan.roi[li]:.4f}  capability "
              f"{format_money(plan.capabilities[li])}  budget {format_money(plan.allocated[li])}{hit}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.days is not None:
        overrides["days"] = args.days
    overrides["t_action"] = args.t_action
    overrides["t_association"] = args.t_association
    try:
        if args.scenario is None:
            market = default_market(**overrides)
        else:
            market = replace(load_scenario(args.scenario), **overrides)
    except (ScenarioError, OSError) as exc:
        print(f"error: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report, states = run_experiment(market)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(out / "report.json", report)
    write_daily_csv(out / "daily.csv", report)
    write_budget_share_csv(out / "budget_shares.csv", report)
    for name, state in states.items():
        formats.write_plans(out / f"plans_{name}.jsonl", state.plans)
        if args.write_logs:
            write_log(out / f"events_{name}.jsonl", state.events())
    print(summarize(report))
    return EXIT_OK


def cmd_report(args) -> int:
    path = args.path
    if path.suffix == ".json":
        print(summarize(read_report_json(path)))
        return EXIT_OK
    results, _ = formats.read_results(path)
    for adv, r in results.items():
        print(f"{adv} ({r.method.value}): {r.n_sequences} action sequence(s), "
              f"{r.uniform_splits} uniform split(s)")
        ranked = sorted(r.lines.items(), key=lambda kv: (-kv[1].roi, kv[0]))
        for li, a in ranked:
            print(f"  {li}: attributed {a.attributed:.4f}  value {format_money(a.value)}  "
                  f"cost {format_money(a.cost)}  roi {a.roi:.4f}")
    return EXIT_OK


COMMANDS = {
    "attribute": cmd_attribute,
    "allocate": cmd_allocate,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, formats.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
