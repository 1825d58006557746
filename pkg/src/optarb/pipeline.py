"""End-to-end stages: market, tradability, universes, graphs, training, backtest, report.

Every stage reads and writes plain files in a run directory so the CLI can
run them one at a time.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from .backtest import BacktestLedger, compute_metrics, cosine_series, run_backtest
from .config import ExperimentConfig, dump_config
from .data_io import (ChainTable, QuantileScaler, SplitPlan, generate_synthetic_market, load_chain,
                      make_splits, write_chain)
from .graphs import ArbGraph, build_arb_graph
from .neural import build_model, load_checkpoint, save_checkpoint
from .trainer import RoundData, RoundResult, predict_graphs, train_round, zero_predictor_mse
from .universe import (TradabilityModel, UniverseSolution, build_problem, default_radii, fit_tradability,
                       load_solutions, save_solutions, solve_universe, tradability_features)

log = logging.getLogger(__name__)


def set_determinism(seed: int) -> None:
    torch.set_num_threads(1)
    torch.set_default_dtype(torch.float64)
    torch.manual_seed(seed)
    np.random.seed(seed)


# market and splits

def simulate(cfg: ExperimentConfig) -> ChainTable:
    return generate_synthetic_market(cfg.market)


def split_plans(cfg: ExperimentConfig, chain: ChainTable) -> dict[str, SplitPlan]:
    last = int(chain.dates.max())
    return {"tr": make_splits(cfg.fit_dates, cfg.splits.p_val, cfg.seed, last),
            "ar": make_splits(cfg.fit_dates, cfg.splits.p_val, cfg.seed + 1, last)}


def model_round(plan: SplitPlan, date: int) -> int:
    """Round whose model scores ``date``; dates before the first test window use round 1."""
    r = plan.round_of(date)
    return r.index if r is not None else 1


# tradability and universes

def tradability_samples(chain: ChainTable, dates) -> tuple[np.ndarray, np.ndarray]:
    """Listed synthetic longs on each date: features as of the prior close, label = both legs traded."""
    X, y = [], []
    have = set(chain.dates.tolist())
    for d in dates:
        if d - 1 not in have:
            continue
        book = chain.book(d)
        if book.empty:
            continue
        mats = book.index.get_level_values(0).to_numpy()
        strikes = book.index.get_level_values(1).to_numpy(float)
        X.append(tradability_features(chain.spot(d - 1), strikes, mats, d))
        y.append((book["traded_p"].astype(bool) & book["traded_c"].astype(bool)).to_numpy(float))
    if not X:
        return np.zeros((0, 2)), np.zeros(0)
    return np.concatenate(X), np.concatenate(y)


def fit_tradability_models(chain: ChainTable, plan: SplitPlan, cfg: ExperimentConfig) -> dict[int, TradabilityModel]:
    models = {}
    radii = default_radii(cfg.universe.n_radii, cfg.universe.max_radius)
    for r in plan.rounds:
        Xtr, ytr = tradability_samples(chain, r.train)
        Xva, yva = tradability_samples(chain, r.val)
        scaler = QuantileScaler().fit(Xtr)
        m = fit_tradability(scaler.transform(Xtr), ytr,
                            scaler.transform(Xva) if len(Xva) else Xva, yva, radii, scaler)
        log.info("tradability round %d radius=%.4f val_error=%.4f", r.index, m.radius, m.val_error)
        models[r.index] = m
    return models


def select_universes(chain: ChainTable, cfg: ExperimentConfig, plans=None) -> dict[int, UniverseSolution]:
    plans = plans or split_plans(cfg, chain)
    models = fit_tradability_models(chain, plans["tr"], cfg)
    dates = chain.dates.tolist()
    out = {}
    for t in dates[2:]:
        cands = chain.traded_sl(t - 1, min_maturity=t + 1)
        if not cands:
            out[t] = UniverseSolution([], 0, 0.0, [], feasible=False)
            continue
        s_prev = chain.spot(t - 1)
        x = tradability_features(s_prev, [a.strike for a in cands], [a.maturity for a in cands], t)
        mu = models[model_round(plans["tr"], t)].predict(x, scaled=False)
        out[t] = solve_universe(build_problem(cands, mu, cfg.universe.p_univ, cfg.dk_max, s_prev))
    return out


def build_graphs(chain: ChainTable, universes: dict[int, UniverseSolution], cfg: ExperimentConfig) -> dict[int, ArbGraph]:
    return {t: build_arb_graph(chain, sol.selected, t, cfg.p_dg, cfg.market.rate)
            for t, sol in sorted(universes.items()) if sol.cardinality >= 2}


def save_graphs(graphs: dict[int, ArbGraph], path_prefix) -> None:
    frames = [g.to_frames() for g in graphs.values()]
    cols_n = ["date", "maturity", "strike"]
    nodes = pd.concat([f[0] for f in frames], ignore_index=True) if frames else pd.DataFrame(columns=cols_n)
    edges = pd.concat([f[1] for f in frames], ignore_index=True) if frames else pd.DataFrame(columns=["date", "src", "dst"])
    nodes.to_csv(f"{path_prefix}_nodes.csv", index=False, float_format="%.17g")
    edges.to_csv(f"{path_prefix}_edges.csv", index=False)


def load_graphs(path_prefix) -> dict[int, ArbGraph]:
    nodes = pd.read_csv(f"{path_prefix}_nodes.csv")
    edges = pd.read_csv(f"{path_prefix}_edges.csv")
    eg = dict(tuple(edges.groupby("date")))
    out = {}
    for d, nd in nodes.groupby("date", sort=True):
        e = eg.get(d, pd.DataFrame({"date": [], "src": [], "dst": []}))
        out[int(d)] = ArbGraph.from_frames(nd.reset_index(drop=True), e)
    return out


# training

def round_data(graphs: dict[int, ArbGraph], plan: SplitPlan, p_univ: int) -> list[RoundData]:
    pick = lambda ds: [graphs[d] for d in ds if d in graphs]  # noqa: E731
    return [RoundData(r.index, pick(r.train), pick(r.val), pick(r.test), p_univ=p_univ) for r in plan.rounds]


def train_all(graphs: dict[int, ArbGraph], cfg: ExperimentConfig, plan: SplitPlan) -> dict[str, list[RoundResult]]:
    out = {}
    for arch in cfg.archs:
        out[arch] = []
        for data in round_data(graphs, plan, cfg.universe.p_univ):
            if not data._test:
                continue
            res = train_round(data, arch, cfg.train)
            res.zero_mse = zero_predictor_mse(data._test)
            log.info("round %d %s test_mse=%.6g zero_mse=%.6g", res.index, arch, res.test_mse, res.zero_mse)
            out[arch].append(res)
    return out


def predict_from_checkpoints(graphs: dict[int, ArbGraph], plan: SplitPlan, ckpt_dir, arch: str) -> pd.DataFrame:
    frames = []
    for r in plan.rounds:
        path = Path(ckpt_dir) / f"{arch}_round{r.index}.pt"
        if not path.exists():
            continue
        model, blob = load_checkpoint(path)
        scalers = {k: QuantileScaler.from_state(v) for k, v in blob["extra"]["scalers"].items()}
        test = [graphs[d] for d in r.test if d in graphs]
        for g, p in zip(test, predict_graphs(model, test, scalers)):
            frames.append(pd.DataFrame({"date": g.date, "maturity": g.maturities, "strike": g.strikes,
                                        "y": g.y, "y_hat": p}))
    if not frames:
        raise FileNotFoundError(f"no checkpoints for {arch} in {ckpt_dir}")
    return pd.concat(frames, ignore_index=True)


# reporting

def round_table(results: dict[str, list[RoundResult]]) -> pd.DataFrame:
    rows = []
    for arch, rs in results.items():
        for r in rs:
            rows.append({"round": r.index, "arch": arch, "p_univ": r.p_univ, "n_layers": r.selected["n_layers"],
                         "width": r.selected["width"], "n_params": r.selected["n_params"],
                         "val_mse": r.val_mse, "test_mse": r.test_mse,
                         "zero_mse": r.zero_mse})
    return pd.DataFrame(rows)


def daily_mse(predictions: pd.DataFrame, window: int = 63) -> pd.DataFrame:
    p = predictions[np.isfinite(predictions["y"])]
    err = (p["y_hat"] - p["y"]) ** 2
    out = err.groupby(p["date"]).mean().rename("mse").reset_index()
    out["rolling_mse"] = out["mse"].rolling(window, min_periods=1).mean()
    return out


def report_tables(ledgers: dict[str, BacktestLedger], predictions: pd.DataFrame,
                  universes: dict[int, UniverseSolution], test_dates: list[int], window: int = 63):
    """Metrics per strategy and one row per test date of plot-ready series."""
    metrics = pd.DataFrame([{"strategy": k, **compute_metrics(v).as_dict()} for k, v in ledgers.items()])
    series = pd.DataFrame({"date": test_dates})
    series["cardinality"] = [universes[d].cardinality if d in universes else 0 for d in test_dates]
    series = series.merge(daily_mse(predictions, window), on="date", how="left")
    for k, led in ledgers.items():
        d = led.daily.set_index("date")
        series[f"cum_pnl_{k}"] = d["cum_pnl"].reindex(test_dates).ffill().fillna(0.0).to_numpy()
        pos = led.positions
        v = {t: g["v_hat"].to_numpy() for t, g in pos.groupby("date")}
        n = {t: g["n"].to_numpy() for t, g in pos.groupby("date")}
        cs = cosine_series(v, n, window).set_index("date")
        series[f"cos_rolling_{k}"] = cs["rolling"].reindex(test_dates).to_numpy()
    return metrics, series


@dataclass
class PipelineResult:
    chain: ChainTable
    universes: dict
    graphs: dict
    rounds: dict
    predictions: pd.DataFrame
    ledgers: dict
    metrics: pd.DataFrame
    series: pd.DataFrame
    plans: dict = field(default_factory=dict)


def run_pipeline(cfg: ExperimentConfig, out_dir=None, chain: ChainTable | None = None) -> PipelineResult:
    set_determinism(cfg.seed)
    chain = chain if chain is not None else simulate(cfg)
    plans = split_plans(cfg, chain)
    universes = select_universes(chain, cfg, plans)
    graphs = build_graphs(chain, universes, cfg)
    rounds = train_all(graphs, cfg, plans["ar"])
    main_arch = cfg.archs[0]
    preds = pd.concat([r.predictions for r in rounds[main_arch]], ignore_index=True)
    ledgers = {s: run_backtest(chain, preds, s, cfg.backtest.cost_rate) for s in cfg.backtest.strategies}
    test_dates = [d for r in plans["ar"].rounds for d in r.test]
    metrics, series = report_tables(ledgers, preds, universes, test_dates, cfg.backtest.cosine_window)
    res = PipelineResult(chain, universes, graphs, rounds, preds, ledgers, metrics, series, plans)
    if out_dir is not None:
        write_run(res, cfg, out_dir)
    return res


def write_run(res: PipelineResult, cfg: ExperimentConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    write_chain(res.chain, out / "chain.csv")
    for k, p in res.plans.items():
        (out / f"splits_{k}.json").write_text(p.to_json())
    save_solutions([s.to_record(d) for d, s in sorted(res.universes.items())], out / "universes.jsonl")
    save_graphs(res.graphs, out / "graphs")
    write_training(res.rounds, out)
    for k, led in res.ledgers.items():
        led.save(out / f"ledger_{k}")
    res.metrics.to_csv(out / "metrics.csv", index=False)
    res.series.to_csv(out / "series.csv", index=False)


def write_training(rounds: dict[str, list[RoundResult]], out: Path) -> None:
    (out / "models").mkdir(exist_ok=True)
    round_table(rounds).to_csv(out / "rounds.csv", index=False)
    for arch, rs in rounds.items():
        pd.concat([r.grid.assign(round=r.index) for r in rs], ignore_index=True).to_csv(
            out / f"grid_{arch}.csv", index=False)
        pd.concat([r.predictions for r in rs], ignore_index=True).to_csv(
            out / f"predictions_{arch}.csv", index=False, float_format="%.17g")
        for r in rs:
            model = build_model(arch, **r.hparams)
            model.load_state_dict(r.state_dict)
            save_checkpoint(model, out / "models" / f"{arch}_round{r.index}.pt", arch, r.hparams,
                            extra={"scalers": r.scalers, "round": r.index})


def load_run_chain(out_dir) -> ChainTable:
    path = Path(out_dir) / "chain.csv"
    if not path.exists():
        raise FileNotFoundError(f"missing upstream artifact {path}")
    return load_chain(path)


def load_plans(out_dir) -> dict[str, SplitPlan]:
    out = {}
    for k in ("tr", "ar"):
        path = Path(out_dir) / f"splits_{k}.json"
        if not path.exists():
            raise FileNotFoundError(f"missing upstream artifact {path}")
        out[k] = SplitPlan.from_json(path.read_text())
    return out


def load_universes(out_dir) -> dict[int, UniverseSolution]:
    path = Path(out_dir) / "universes.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"missing upstream artifact {path}")
    return load_solutions(path)


def metrics_json(metrics: pd.DataFrame) -> str:
    recs = metrics.to_dict(orient="records")
    return json.dumps([{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()}
                       for r in recs], indent=1)
