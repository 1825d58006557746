"""Per-date graphs over the trading universe and their node features."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data_io import ChainTable
from .market_core import AssetId, implied_volatility

FEATURE_NAMES = (
    "moneyness", "days_to_maturity", "y_close", "y_open",
    "y_high_est", "y_low_est", "y_close_change", "iv_put", "iv_call",
)
N_FEATURES = len(FEATURE_NAMES)


def neighbour_count(p_dg: float, group_size: int) -> int:
    """Nearest even number to ``p_dg * group_size`` (halves round up), or 1 if that is 0."""
    if not 0.0 <= p_dg <= 1.0:
        raise ValueError("p_dg must lie in [0, 1]")
    x = p_dg * group_size
    k = 2 * math.floor(x / 2 + 0.5)
    return k if k > 0 else 1


def nearest_within(values: np.ndarray, i: int, k: int) -> list[int]:
    """Indices j != i whose distance to values[i] is at most the k-th smallest such distance.

    Equal distances are kept together, so more than ``k`` indices can come back.
    """
    others = [j for j in range(len(values)) if j != i]
    if not others:
        return []
    d = np.abs(values[others] - values[i])
    cutoff = np.sort(d)[min(k, len(d)) - 1]
    return [j for j, dj in zip(others, d) if dj <= cutoff]


def build_graph(universe: list[AssetId], p_dg: float) -> np.ndarray:
    """Directed edges (src, dst) over ``universe`` indices; src is a near neighbour of dst.

    Strike neighbours are taken within each maturity, maturity neighbours
    within each strike, each with its own neighbour count.
    """
    mats = np.array([a.maturity for a in universe], float)
    strikes = np.array([a.strike for a in universe], float)
    edges = set()
    for group_key, along in ((mats, strikes), (strikes, mats)):
        for g in np.unique(group_key):
            idx = np.flatnonzero(group_key == g)
            k = neighbour_count(p_dg, len(idx))
            vals = along[idx]
            for pos, dst in enumerate(idx):
                for j in nearest_within(vals, pos, k):
                    edges.add((int(idx[j]), int(dst)))
    if not edges:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(sorted(edges), dtype=np.int64)


def in_neighbours(edges: np.ndarray, n: int) -> list[list[int]]:
    """Sources of edges into each node."""
    out: list[list[int]] = [[] for _ in range(n)]
    for s, d in edges:
        out[d].append(int(s))
    return out


@dataclass
class ArbGraph:
    date: int
    nodes: list[AssetId]
    edges: np.ndarray
    x: np.ndarray                      # (n, 9)
    y: np.ndarray                      # target y at the open of ``date``; NaN when unavailable
    delta_bar: np.ndarray = field(default_factory=lambda: np.zeros(0))  # group mean of delta at that open

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def strikes(self) -> np.ndarray:
        return np.array([a.strike for a in self.nodes], float)

    @property
    def maturities(self) -> np.ndarray:
        return np.array([a.maturity for a in self.nodes], int)

    @property
    def target_mask(self) -> np.ndarray:
        return np.isfinite(self.y)

    def to_frames(self) -> tuple[pd.DataFrame, pd.DataFrame]:
        nodes = pd.DataFrame(self.x, columns=list(FEATURE_NAMES))
        nodes.insert(0, "strike", self.strikes)
        nodes.insert(0, "maturity", self.maturities)
        nodes.insert(0, "date", self.date)
        nodes["y"] = self.y
        nodes["delta_bar"] = self.delta_bar
        edges = pd.DataFrame(self.edges, columns=["src", "dst"])
        edges.insert(0, "date", self.date)
        return nodes, edges

    @classmethod
    def from_frames(cls, nodes: pd.DataFrame, edges: pd.DataFrame) -> "ArbGraph":
        assets = [AssetId.sl(m, k) for m, k in zip(nodes["maturity"], nodes["strike"])]
        return cls(int(nodes["date"].iloc[0]) if len(nodes) else int(edges["date"].iloc[0]),
                   assets,
                   edges[["src", "dst"]].to_numpy(np.int64).reshape(-1, 2),
                   nodes[list(FEATURE_NAMES)].to_numpy(float),
                   nodes["y"].to_numpy(float),
                   nodes["delta_bar"].to_numpy(float))


# features

def _quotes_for(book: pd.DataFrame, keys) -> pd.DataFrame:
    idx = pd.MultiIndex.from_tuples(keys, names=["maturity", "strike"])
    return book.reindex(idx)


def _deltas(book: pd.DataFrame, keys, S: float, put_col: str, call_col: str) -> np.ndarray:
    rows = _quotes_for(book, keys)
    K = np.array([k for _, k in keys], float)
    return ((S - (rows[call_col].to_numpy(float) - rows[put_col].to_numpy(float))) / K)


def group_demean(delta: np.ndarray, maturities: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """delta minus the mean over same-maturity entries with a finite delta."""
    y = np.full_like(delta, np.nan)
    dbar = np.full_like(delta, np.nan)
    for m in np.unique(maturities):
        grp = maturities == m
        ok = grp & np.isfinite(delta)
        if ok.any():
            mean = math.fsum(delta[ok]) / ok.sum()
            dbar[grp] = mean
            y[ok] = delta[ok] - mean
    return y, dbar


def y_at(chain: ChainTable, nodes: list[AssetId], date: int, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Arbitrage target for ``nodes`` from quotes of ``date``.

    ``kind`` is "open" or "close" for the observed value, "high_est" for the
    (put high, call low) estimate and "low_est" for (put low, call high).  The
    high estimate is paired with the spot low and vice versa, which is the
    combination that moves all three in the same direction.
    """
    cols = {"open": ("open", "open_p", "open_c"),
            "close": ("close", "close_p", "close_c"),
            "high_est": ("low", "high_p", "low_c"),
            "low_est": ("high", "low_p", "high_c")}[kind]
    book = chain.book(date)
    keys = [a.key for a in nodes]
    if date not in chain.underlying.index or book.empty:
        nan = np.full(len(nodes), np.nan)
        return nan, nan.copy()
    delta = _deltas(book, keys, chain.spot(date, cols[0]), cols[1], cols[2])
    return group_demean(delta, np.array([a.maturity for a in nodes]))


def _impute_median(v: np.ndarray, groups: np.ndarray) -> np.ndarray:
    v = v.copy()
    for g in np.unique(groups):
        grp = groups == g
        ok = grp & np.isfinite(v)
        if ok.any():
            v[grp & ~np.isfinite(v)] = np.median(v[ok])
    if np.isfinite(v).any():
        v[~np.isfinite(v)] = np.median(v[np.isfinite(v)])
    else:
        v[:] = 0.0
    return v


def node_features(chain: ChainTable, nodes: list[AssetId], date: int, rate: float) -> np.ndarray:
    """Nine features per node, all observable by the close of ``date - 1``."""
    if date - 2 not in chain.underlying.index or date - 1 not in chain.underlying.index:
        raise ValueError(f"features for {date} need the two prior trading dates")
    tm = chain.time_model
    prev = date - 1
    mats = np.array([a.maturity for a in nodes])
    K = np.array([a.strike for a in nodes], float)
    s_close = chain.spot(prev, "close")

    y_c, _ = y_at(chain, nodes, prev, "close")
    y_o, _ = y_at(chain, nodes, prev, "open")
    y_h, _ = y_at(chain, nodes, prev, "high_est")
    y_l, _ = y_at(chain, nodes, prev, "low_est")
    y_c2, _ = y_at(chain, nodes, prev - 1, "close")
    change = y_c - y_c2

    book = chain.book(prev)
    iv = {}
    for typ, col in (("PT", "close_p"), ("CL", "close_c")):
        price = _quotes_for(book, [a.key for a in nodes])[col].to_numpy(float)
        with np.errstate(invalid="ignore"):
            raw = implied_volatility(price, s_close, K, tm.c(prev), tm.maturity_time(mats), rate, typ)
        iv[typ] = _impute_median(np.atleast_1d(raw), mats)

    x = np.column_stack([
        s_close - K,
        (mats - date).astype(float),
        y_c, y_o, y_h, y_l, change,
        iv["PT"], iv["CL"],
    ])
    x[:, 2:7] = np.nan_to_num(x[:, 2:7], nan=0.0)
    return x


def build_arb_graph(chain: ChainTable, nodes: list[AssetId], date: int, p_dg: float, rate: float) -> ArbGraph:
    nodes = sorted(nodes, key=lambda a: a.key)
    x = node_features(chain, nodes, date, rate)
    y, dbar = y_at(chain, nodes, date, "open")
    return ArbGraph(date, nodes, build_graph(nodes, p_dg), x, y, dbar)
