"""Command-line entry point: ``dagalpha <command> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import backtest as bt
from .config import MiningConfig
from .engine import evaluate
from .expr import ExprError, lint, parse
from .graph import load as load_graph, to_dot
from .integrator import mega_factor, write_weights
from .metrics import EmptyReportError, ic_suite
from .mining import Miner, ResumeError, iteration_curve
from .panel import PanelError, forward_returns, load_panel


def _splits(items) -> dict:
    """``name=start:end`` pairs; either end may be empty."""
    out = {}
    for item in items or ():
        name, _, span = item.partition("=")
        start, _, end = span.partition(":")
        if not name or not _:
            raise argparse.ArgumentTypeError(f"bad split {item!r}, expected name=start:end")
        out[name] = (start or None, end or None)
    return out or {"all": (None, None)}


def cmd_mine(args) -> int:
    config = MiningConfig.load(args.config)
    panel = load_panel(args.data, on_invalid=args.on_invalid)
    run_dir = args.out
    if args.resume:
        p = Path(args.resume)
        run_dir = p.parent if p.is_file() else p
    if run_dir is None:
        print("mine: --out is required unless --resume is given", file=sys.stderr)
        return 2
    miner = Miner(config, panel, run_dir, dump_prompts=args.dump_prompts)
    try:
        report = miner.run(resume=bool(args.resume))
    except ResumeError as exc:
        print(f"mine: {exc}", file=sys.stderr)
        return 1
    best = max((n["quality"] for n in report.final_pool), default=0.0)
    print(json.dumps({"status": report.status, "iterations": miner.iteration,
                      "evaluations": report.evaluations, "pool_size": len(report.final_pool),
                      "best_quality": best, "splits": report.splits}, indent=2))
    return 0 if report.status != "interrupted" else 3


def cmd_eval_factor(args) -> int:
    try:
        expr = parse(args.expr)
    except ExprError as exc:
        print(f"eval-factor: {exc}", file=sys.stderr)
        return 1
    report = lint(expr, args.max_len, None)
    for v in report.violations:
        print(f"{v.severity}: {v.code}: {v.message}", file=sys.stderr)
    if not report.ok:
        return 1
    panel = load_panel(args.data, on_invalid=args.on_invalid)
    values = evaluate(expr, panel)
    out = {}
    for name, (start, end) in _splits(args.splits).items():
        sl = panel.date_slice(start, end)
        sub = panel.rows(sl)
        try:
            out[name] = ic_suite(values[sl], forward_returns(sub, args.horizon)).to_dict()
        except (ValueError, EmptyReportError) as exc:
            out[name] = {"error": str(exc)}
    print(json.dumps(out, indent=2))
    return 0


def cmd_backtest(args) -> int:
    config = MiningConfig.load(args.config) if args.config else MiningConfig()
    graph = load_graph(args.graph, max(config.capacity, 10 ** 6))
    panel = load_panel(args.data, on_invalid=args.on_invalid)
    factors = {n.id: evaluate(n.expr, panel) for n in graph.active}
    ig = config.integrator
    mega, history = mega_factor(factors, forward_returns(panel, config.horizon), ig.window,
                                ig.threshold, ig.rebalance_every, config.embargo)
    b = config.backtest
    res = bt.simulate(mega, panel, b.top_frac, b.hold, b.cost_rt, b.periods, b.risk_free)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.write_curve(panel.dates, out / "backtest_curve.csv")
    res.write_summary(out / "backtest_summary.json")
    write_weights(history, panel.dates, out / "mega_weights.csv")
    print(json.dumps(res.summary(), indent=2))
    return 0


def cmd_export_dag(args) -> int:
    graph = load_graph(args.graph, 10 ** 6)
    text = to_dot(graph) if args.format == "dot" else graph.dumps()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    rows = iteration_curve(args.run)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "evaluations", "pool_size", "pool_mean_quality",
                    "pool_max_quality"])
        for r in rows:
            w.writerow([r[0], r[1], r[2], repr(r[3]), repr(r[4])])
    finally:
        if args.out:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dagalpha", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("--data", required=True, help="long-form panel CSV")
        p.add_argument("--on-invalid", choices=("reject", "mask"), default="reject")

    p = sub.add_parser("mine", help="run the mining loop")
    p.add_argument("--config", required=True)
    data_args(p)
    p.add_argument("--out", help="run directory")
    p.add_argument("--resume", help="run directory or graph checkpoint to continue")
    p.add_argument("--dump-prompts", action="store_true", help="write every assembled prompt")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("eval-factor", help="metric suite of one expression")
    p.add_argument("--expr", required=True)
    data_args(p)
    p.add_argument("--splits", nargs="*", help="name=start:end (ISO dates)")
    p.add_argument("--horizon", type=int, default=20)
    p.add_argument("--max-len", type=int, default=40)
    p.set_defaults(func=cmd_eval_factor)

    p = sub.add_parser("backtest", help="Mega factor backtest of a graph checkpoint")
    p.add_argument("--graph", required=True)
    data_args(p)
    p.add_argument("--config")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("export-dag", help="dump the factor lineage")
    p.add_argument("--graph", required=True)
    p.add_argument("--format", choices=("json", "dot"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_dag)

    p = sub.add_parser("report", help="iteration vs pool quality CSV of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PanelError, OSError, ValueError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
