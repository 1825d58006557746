"""Daily open-auction strategy loop, ledger bookkeeping and performance metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data_io import ChainTable
from .graphs import group_demean
from .market_core import AssetId
from .slsa import (Position, bm_project, build_constraints, inception_flow, maturity_flow,
                   normalize_one_long_one_short, slsa_project)

STRATEGIES = ("SA", "BM1", "BM2")
LEDGER_FORMAT = "optarb-ledger/1"


@dataclass
class BacktestLedger:
    strategy: str
    cost_rate: float
    daily: pd.DataFrame          # one row per trading date of the strategy
    flows: pd.DataFrame          # every realized flow: date, source_date, label, maturity, amount
    positions: pd.DataFrame      # date, maturity, strike, v_hat, n
    meta: dict = field(default_factory=dict)

    @property
    def total_pnl(self) -> float:
        return float(self.daily["cum_pnl"].iloc[-1]) if len(self.daily) else 0.0

    def save(self, prefix) -> None:
        self.daily.to_csv(f"{prefix}_daily.csv", index=False)
        self.flows.to_csv(f"{prefix}_flows.csv", index=False)
        self.positions.to_csv(f"{prefix}_positions.csv", index=False)


def _project(kind: str, v_hat: np.ndarray, universe: list[AssetId]) -> Position:
    if kind == "SA":
        return slsa_project(v_hat, build_constraints(universe))
    return bm_project(v_hat, universe, kind)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return float("nan")
    return float(a @ b / (na * nb))


def run_backtest(chain: ChainTable, predictions: pd.DataFrame, strategy: str = "SA",
                 cost_rate: float = 0.0009) -> BacktestLedger:
    """Trade each prediction date at the open and hold every leg to its expiry.

    ``predictions`` has columns date, maturity, strike, y_hat; the rows of one
    date form that date's universe.  Benchmark legs whose expiry lies past
    the last chain date are closed at the last close mark of the synthetic
    long; SA legs need no mark since their expiry flow is always zero.
    """
    strategy = strategy.upper()
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if cost_rate < 0:
        raise ValueError("cost_rate must be non-negative")
    last = int(chain.dates.max())
    daily, flows, pos_rows = [], [], []
    pending: dict[int, float] = {}

    for t, grp in predictions.sort_values(["date", "maturity", "strike"]).groupby("date", sort=True):
        t = int(t)
        universe = [AssetId.sl(int(m), float(k)) for m, k in zip(grp["maturity"], grp["strike"])]
        K = np.array([a.strike for a in universe])
        mats = np.array([a.maturity for a in universe])
        book = chain.book(t)
        idx = pd.MultiIndex.from_tuples([a.key for a in universe], names=["maturity", "strike"])
        opens = book.reindex(idx)[["open_p", "open_c"]].to_numpy(float)
        if not np.isfinite(opens).all():
            bad = universe[int(np.flatnonzero(~np.isfinite(opens).all(axis=1))[0])]
            raise ValueError(f"missing open quote for {bad.key} on {t}")
        s_open = chain.spot(t, "open")
        delta = (s_open - (opens[:, 1] - opens[:, 0])) / K
        y, dbar = group_demean(delta, mats)

        v_hat = K * grp["y_hat"].to_numpy(float)
        pos = normalize_one_long_one_short(_project(strategy, v_hat, universe))
        row = {"date": t, "n_assets": len(universe), "degenerate": pos.degenerate}
        if pos.degenerate:
            pos = Position(universe, np.zeros(len(universe)), strategy, degenerate=True)
        absn = np.abs(pos.n)
        contracts = math.fsum(absn)
        incep = inception_flow(pos, y, dbar)
        cost = cost_rate * math.fsum(absn * (opens[:, 0] + opens[:, 1]))
        flows.append((t, t, "inception", -1, incep))

        position_pnl = incep
        for mat in np.unique(mats):
            mat = int(mat)
            if mat <= last:
                amount = maturity_flow(pos, mat, chain.spot(mat, "close"))
                pay = mat
                label = "maturity"
            elif strategy == "SA":
                # the expiry flow is zero whatever the settlement, so nothing needs marking
                amount, pay, label = 0.0, last, "maturity"
            else:
                sel = mats == mat
                marks = chain.book(last).reindex(idx[sel])
                sl_mark = (marks["close_c"] - marks["close_p"]).to_numpy(float)
                amount = math.fsum(pos.n[sel] * sl_mark)
                pay = last
                label = "closeout"
            flows.append((pay, t, label, mat, amount))
            pending[pay] = pending.get(pay, 0.0) + amount
            position_pnl += amount

        row.update({
            "inception": incep, "cost": cost, "contracts": contracts, "position_pnl": position_pnl - cost,
            "cosine": _cosine(v_hat, pos.n),
            "hhi": math.fsum((absn / contracts) ** 2) if contracts > 0 else float("nan"),
            "abs_moneyness": math.fsum(absn * np.abs(s_open - K)) / contracts if contracts > 0 else float("nan"),
            "abs_ttm": math.fsum(absn * (mats - t)) / contracts if contracts > 0 else float("nan"),
        })
        daily.append(row)
        for a, v, n in zip(universe, v_hat, pos.n):
            pos_rows.append((t, a.maturity, a.strike, v, n))

    daily_df = pd.DataFrame(daily)
    flow_df = pd.DataFrame(flows, columns=["date", "source_date", "label", "maturity", "amount"])
    if len(daily_df):
        cash_dates = sorted(set(daily_df["date"]) | set(pending))
        cash = pd.DataFrame({"date": cash_dates})
        cash = cash.merge(daily_df, on="date", how="left")
        cash["degenerate"] = cash["degenerate"].astype("boolean").fillna(False).astype(bool)
        cash["traded"] = cash["date"].isin(daily_df["date"])
        for col in ("inception", "cost"):
            cash[col] = cash[col].fillna(0.0)
        cash["maturity_cash"] = [pending.get(int(d), 0.0) for d in cash["date"]]
        cash["cash"] = cash["inception"] + cash["maturity_cash"] - cash["cost"]
        cash["cum_pnl"] = np.cumsum(cash["cash"].to_numpy())
        daily_df = cash
    pos_df = pd.DataFrame(pos_rows, columns=["date", "maturity", "strike", "v_hat", "n"])
    return BacktestLedger(strategy, cost_rate, daily_df, flow_df, pos_df,
                          {"format": LEDGER_FORMAT, "last_date": last})


def ledger_total_second_pass(ledger: BacktestLedger) -> float:
    """Total P&L rebuilt from the flow list and the cost column, independent of cum_pnl."""
    return math.fsum(ledger.flows["amount"]) - math.fsum(ledger.daily["cost"])


# metrics

@dataclass
class MetricsReport:
    information_ratio: float
    ir_defined: bool
    sortino: float
    sortino_defined: bool
    hhi_mean: float
    effective_n: float
    avg_abs_moneyness: float
    avg_abs_ttm: float
    total_pnl: float
    n_dates: int
    mean_return: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def daily_returns(ledger: BacktestLedger) -> pd.Series:
    """P&L per gross contract of each traded (non-degenerate) position, keyed by its trade date."""
    d = ledger.daily
    d = d[d["traded"] & ~d["degenerate"] & (d["contracts"] > 0)]
    return pd.Series((d["position_pnl"] / d["contracts"]).to_numpy(float), index=d["date"].to_numpy(int))


def information_ratio(r) -> tuple[float, bool]:
    r = np.asarray(r, float)
    if r.size < 2:
        return float("nan"), False
    sd = r.std(ddof=1)
    if sd == 0:
        return float("nan"), False
    return float(r.mean() / sd), True


def sortino_ratio(r) -> tuple[float, bool]:
    r = np.asarray(r, float)
    if r.size == 0:
        return float("nan"), False
    downside = math.sqrt(np.mean(np.minimum(r, 0.0) ** 2))
    if downside == 0:
        return float("nan"), False
    return float(r.mean() / downside), True


def hhi(n) -> float:
    w = np.abs(np.asarray(n, float))
    total = w.sum()
    if total == 0:
        return float("nan")
    return float(np.sum((w / total) ** 2))


def compute_metrics(ledger: BacktestLedger) -> MetricsReport:
    r = daily_returns(ledger)
    if len(r) < 2:
        raise ValueError("metrics need at least two traded dates")
    ir, ir_ok = information_ratio(r)
    so, so_ok = sortino_ratio(r)
    d = ledger.daily[ledger.daily["traded"] & ~ledger.daily["degenerate"]]
    h = float(d["hhi"].mean())
    return MetricsReport(
        information_ratio=ir, ir_defined=ir_ok, sortino=so, sortino_defined=so_ok,
        hhi_mean=h, effective_n=1.0 / h if h > 0 else float("nan"),
        avg_abs_moneyness=float(d["abs_moneyness"].mean()), avg_abs_ttm=float(d["abs_ttm"].mean()),
        total_pnl=ledger.total_pnl, n_dates=len(r), mean_return=float(r.mean()),
    )


def cosine_series(v_hats: dict, ns: dict, window: int = 63) -> pd.DataFrame:
    """Per-date cosine of prediction and position, with a trailing rolling mean.

    Dates where either vector is zero get NaN and ``skipped=True``.
    """
    rows = []
    for d in sorted(v_hats):
        c = _cosine(np.asarray(v_hats[d], float), np.asarray(ns[d], float))
        rows.append((d, c, math.isnan(c)))
    out = pd.DataFrame(rows, columns=["date", "cosine", "skipped"])
    out["rolling"] = out["cosine"].rolling(window, min_periods=1).mean()
    return out


def maturity_flow_summary(ledger: BacktestLedger) -> pd.DataFrame:
    """Sum of maturity flows per expiry date."""
    f = ledger.flows[ledger.flows["label"] == "maturity"]
    return f.groupby("date", as_index=False)["amount"].sum()
