"""Command-line entry point: one subcommand per pipeline stage, all sharing a run directory."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

from . import pipeline as pl
from .backtest import BacktestLedger, run_backtest
from .config import dump_config, load_config
from .data_io import write_chain
from .universe import save_solutions

log = logging.getLogger("optarb")

COMMANDS = ("simulate-data", "select-universe", "build-graphs", "train", "predict", "backtest", "report")


def _setup(args) -> tuple:
    run = Path(args.run_dir)
    path = args.config
    if path is None and (run / "config.yaml").exists():
        path = run / "config.yaml"
    cfg = load_config(path, args.set)
    if args.seed is not None:
        cfg.seed = cfg.market.seed = args.seed
    run.mkdir(parents=True, exist_ok=True)
    handlers = [logging.FileHandler(run / "run.log"), logging.StreamHandler(sys.stderr)]
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s", handlers=handlers, force=True)
    log.info("command=%s seed=%d run_dir=%s", args.command, cfg.seed, run)
    pl.set_determinism(cfg.seed)
    return cfg, run


def _need(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing upstream artifact {path}")
    return path


def cmd_simulate(cfg, run, args):
    chain = pl.simulate(cfg)
    write_chain(chain, run / "chain.csv")
    dump_config(cfg, run / "config.yaml")
    for k, plan in pl.split_plans(cfg, chain).items():
        (run / f"splits_{k}.json").write_text(plan.to_json())
    log.info("wrote %d quotes over %d dates", len(chain), len(chain.dates))


def cmd_select(cfg, run, args):
    chain = pl.load_run_chain(run)
    plans = pl.load_plans(run)
    sols = pl.select_universes(chain, cfg, plans)
    save_solutions([s.to_record(d) for d, s in sorted(sols.items())], run / "universes.jsonl")
    log.info("selected universes for %d dates", len(sols))


def cmd_graphs(cfg, run, args):
    chain = pl.load_run_chain(run)
    graphs = pl.build_graphs(chain, pl.load_universes(run), cfg)
    pl.save_graphs(graphs, run / "graphs")
    log.info("built %d graphs", len(graphs))


def cmd_train(cfg, run, args):
    _need(run / "graphs_nodes.csv")
    graphs = pl.load_graphs(run / "graphs")
    rounds = pl.train_all(graphs, cfg, pl.load_plans(run)["ar"])
    pl.write_training(rounds, run)
    print(pl.round_table(rounds).to_string(index=False))


def cmd_predict(cfg, run, args):
    _need(run / "graphs_nodes.csv")
    graphs = pl.load_graphs(run / "graphs")
    plan = pl.load_plans(run)["ar"]
    for arch in cfg.archs:
        preds = pl.predict_from_checkpoints(graphs, plan, _need(run / "models"), arch)
        preds.to_csv(run / f"predictions_{arch}.csv", index=False, float_format="%.17g")
        log.info("wrote %d predictions for %s", len(preds), arch)


def _predictions(cfg, run) -> pd.DataFrame:
    return pd.read_csv(_need(run / f"predictions_{cfg.archs[0]}.csv"))


def cmd_backtest(cfg, run, args):
    chain = pl.load_run_chain(run)
    preds = _predictions(cfg, run)
    cost = cfg.backtest.cost_rate if args.cost_rate is None else args.cost_rate
    strategies = [args.strategy.upper()] if args.strategy else cfg.backtest.strategies
    for s in strategies:
        led = run_backtest(chain, preds, s, cost)
        led.save(run / f"ledger_{s}")
        print(f"{s}: total P&L {led.total_pnl:.10g} over {int(led.daily['traded'].sum())} trade dates")


def cmd_report(cfg, run, args):
    preds = _predictions(cfg, run)
    universes = pl.load_universes(run)
    plan = pl.load_plans(run)["ar"]
    ledgers = {}
    for s in cfg.backtest.strategies:
        prefix = run / f"ledger_{s}"
        if not Path(f"{prefix}_daily.csv").exists():
            continue
        ledgers[s] = BacktestLedger(s, cfg.backtest.cost_rate, pd.read_csv(f"{prefix}_daily.csv"),
                                    pd.read_csv(f"{prefix}_flows.csv"), pd.read_csv(f"{prefix}_positions.csv"))
    if not ledgers:
        raise FileNotFoundError(f"no ledgers in {run}; run backtest first")
    test_dates = [d for r in plan.rounds for d in r.test]
    metrics, series = pl.report_tables(ledgers, preds, universes, test_dates, cfg.backtest.cosine_window)
    metrics.to_csv(run / "metrics.csv", index=False)
    series.to_csv(run / "series.csv", index=False)
    if (run / "rounds.csv").exists():
        print(pd.read_csv(run / "rounds.csv").to_string(index=False))
    print(metrics.to_string(index=False))


HANDLERS = {"simulate-data": cmd_simulate, "select-universe": cmd_select, "build-graphs": cmd_graphs,
            "train": cmd_train, "predict": cmd_predict, "backtest": cmd_backtest, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="optarb", description="Synthetic-long arbitrage research pipeline")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML experiment config")
        s.add_argument("--run-dir", default="runs/default")
        s.add_argument("--seed", type=int)
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config override, e.g. train.max_epochs=5")
        if name == "backtest":
            s.add_argument("--strategy", choices=["sa", "bm1", "bm2", "SA", "BM1", "BM2"])
            s.add_argument("--cost-rate", type=float)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg, run = _setup(args)
        HANDLERS[args.command](cfg, run, args)
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"optarb {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
