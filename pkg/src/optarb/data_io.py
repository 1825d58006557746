"""Option-chain ingestion, synthetic market generation, splits and scaling."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd
from scipy.special import ndtr, ndtri

from .market_core import AssetId, AssetType, OptionQuote, TimeModel, bs_price

log = logging.getLogger(__name__)

CHAIN_COLUMNS = ("date", "type", "maturity", "strike", "open", "high", "low", "close", "traded")
OHLC = ("open", "high", "low", "close")


class ChainError(ValueError):
    pass


class ChainTable:
    """Option quotes plus the underlying's daily OHLC.

    ``quotes`` has one row per (type, maturity, strike, date) for PT/CL;
    ``underlying`` is indexed by date with open/high/low/close columns.
    """

    def __init__(self, quotes: pd.DataFrame, underlying: pd.DataFrame, time_model: TimeModel | None = None):
        self.quotes = quotes.reset_index(drop=True)
        self.underlying = underlying.sort_index()
        self.time_model = time_model or TimeModel()
        self._book_cache: dict[int, pd.DataFrame] = {}
        self._validate()

    def _validate(self):
        q = self.quotes
        dup = q.duplicated(["type", "maturity", "strike", "date"], keep=False)
        if dup.any():
            r = q[dup].iloc[0]
            raise ChainError(f"duplicate key ({r['type']}, {r['maturity']}, {r['strike']}, {r['date']})")
        if self.underlying.index.duplicated().any():
            raise ChainError("duplicate underlying date")

    def __len__(self):
        return len(self.quotes)

    @property
    def dates(self) -> np.ndarray:
        return self.underlying.index.to_numpy()

    def spot(self, date: int, field: str = "close") -> float:
        return float(self.underlying.at[date, field])

    def iter_quotes(self):
        for r in self.quotes.itertuples(index=False):
            yield _row_to_quote(r)

    @cached_property
    def _paired(self) -> tuple[pd.DataFrame, np.ndarray]:
        """Put/call rows joined on (date, maturity, strike), sorted, with the date column as an array."""
        q = self.quotes
        puts = q[q["type"] == "PT"].drop(columns="type")
        calls = q[q["type"] == "CL"].drop(columns="type")
        key = ["date", "maturity", "strike"]
        merged = puts.merge(calls, on=key, suffixes=("_p", "_c")).sort_values(key, ignore_index=True)
        return merged, merged["date"].to_numpy()

    def book(self, date: int) -> pd.DataFrame:
        """Paired put/call quotes on ``date`` indexed by (maturity, strike).

        Columns are ``open_p ... traded_p`` and ``open_c ... traded_c``.
        Built on first request and cached.
        """
        date = int(date)
        if date not in self._book_cache:
            merged, dates = self._paired
            lo, hi = np.searchsorted(dates, [date, date + 1])
            self._book_cache[date] = (merged.iloc[lo:hi].drop(columns="date").set_index(["maturity", "strike"])
                                      if hi > lo else _EMPTY_BOOK)
        return self._book_cache[date]

    def traded_sl(self, date: int, min_maturity: int | None = None) -> list[AssetId]:
        """Synthetic longs whose put and call both traded on ``date``."""
        b = self.book(date)
        if b.empty:
            return []
        ok = b["traded_p"].astype(bool) & b["traded_c"].astype(bool)
        keys = b.index[ok.to_numpy()]
        if min_maturity is not None:
            keys = [k for k in keys if k[0] >= min_maturity]
        return [AssetId.sl(m, k) for m, k in keys]

    def to_frame(self) -> pd.DataFrame:
        ui = self.underlying.reset_index().rename(columns={"index": "date"})
        ui["type"] = "UI"
        ui["maturity"] = pd.NA
        ui["strike"] = np.nan
        ui["traded"] = 1
        q = self.quotes.copy()
        q["traded"] = q["traded"].astype(int)
        q["maturity"] = q["maturity"].astype("Int64")
        ui["maturity"] = ui["maturity"].astype("Int64")
        out = pd.concat([ui[list(CHAIN_COLUMNS)], q[list(CHAIN_COLUMNS)]], ignore_index=True)
        return out.sort_values(["date", "type", "maturity", "strike"], na_position="first", kind="mergesort")


_EMPTY_BOOK = pd.DataFrame(
    columns=[f"{c}_{s}" for s in ("p", "c") for c in (*OHLC, "traded")],
    index=pd.MultiIndex.from_tuples([], names=["maturity", "strike"]),
)


def _row_to_quote(r) -> OptionQuote:
    return OptionQuote(AssetId(AssetType(r.type), int(r.maturity), float(r.strike)), int(r.date),
                       r.open, r.high, r.low, r.close, bool(r.traded))


def load_chain(path, schema: dict | None = None, time_model: TimeModel | None = None) -> ChainTable:
    """Read a comma-separated chain file.

    ``schema`` maps canonical column names to the file's column names.
    Underlying rows carry ``type == "UI"`` and blank maturity/strike.
    """
    schema = dict(schema or {})
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    rename = {schema.get(c, c): c for c in CHAIN_COLUMNS}
    missing = [src for src in rename if src not in raw.columns]
    if missing:
        raise ChainError(f"missing column(s): {', '.join(missing)}")
    raw = raw.rename(columns=rename)[list(CHAIN_COLUMNS)]

    bad_rows = []
    parsed = {c: [] for c in CHAIN_COLUMNS}
    for i, r in enumerate(raw.itertuples(index=False), start=2):  # header is line 1
        try:
            typ = r.type.strip().upper()
            if typ not in ("UI", "PT", "CL"):
                raise ValueError(f"unknown type {r.type!r}")
            date = int(r.date)
            o, h, lo, c = (float(getattr(r, f)) for f in OHLC)
            traded = r.traded.strip().lower() in ("1", "true", "t", "yes", "y")
            if typ == "UI":
                mat, strike = None, None
            else:
                mat, strike = int(r.maturity), float(r.strike)
                if strike <= 0:
                    raise ValueError("non-positive strike")
        except (ValueError, TypeError) as exc:
            raise ChainError(f"unparsable row {i}: {exc}") from None
        if not lo <= min(o, c) <= max(o, c) <= h:
            bad_rows.append(i)
            continue
        for name, val in zip(CHAIN_COLUMNS, (date, typ, mat, strike, o, h, lo, c, traded)):
            parsed[name].append(val)
    if bad_rows:
        raise ChainError(f"OHLC ordering violated in row(s) {bad_rows}")

    df = pd.DataFrame(parsed)
    ui = df[df["type"] == "UI"]
    if ui["date"].duplicated().any():
        d = ui.loc[ui["date"].duplicated(), "date"].iloc[0]
        raise ChainError(f"duplicate key (UI, {d})")
    underlying = ui.set_index("date")[list(OHLC)].astype(float)
    quotes = df[df["type"] != "UI"].copy()
    quotes["maturity"] = quotes["maturity"].astype(int)
    quotes["strike"] = quotes["strike"].astype(float)
    quotes["traded"] = quotes["traded"].astype(bool)
    return ChainTable(quotes, underlying, time_model)


def write_chain(chain: ChainTable, path) -> None:
    frame = chain.to_frame()
    frame.to_csv(path, index=False, float_format="%.17g")


# synthetic market

@dataclass
class SyntheticMarketConfig:
    n_dates: int = 300
    expiry_every: int = 21          # trading days between consecutive expiries
    n_listed_maturities: int = 3
    strike_step: float = 2.5
    strike_band: float = 0.2        # list strikes within +-band of spot
    S0: float = 100.0
    drift: float = 0.05             # annual
    vol: float = 0.2                # annual
    intraday_range: float = 0.004   # scale of high/low excursions
    rate: float = 0.03
    arb_noise_scale: float = 0.0
    arb_ar1: float = 0.9
    trade_prob_atm: float = 0.98
    trade_moneyness_scale: float = 0.03
    trade_moneyness_mid: float = 0.12
    seed: int = 0


def generate_synthetic_market(cfg: SyntheticMarketConfig, time_model: TimeModel | None = None) -> ChainTable:
    """Lognormal underlying with Black-Scholes options and put-leg mispricing.

    Each option is valued at the four (spot, time) observations of the day:
    (open, o(t)), (high, h(t)), (low, l(t)) and (close, c(t)).  Open and close
    quotes are those values; see ``_option_ohlc`` for the high and low.  A
    per-asset factor ``exp(eps)`` multiplies all put quotes, with ``eps`` a
    stationary AR(1) of standard deviation ``arb_noise_scale``.  Contracts
    are quoted up to the day before expiry and settle at the expiry close.
    """
    if cfg.arb_noise_scale < 0:
        raise ValueError("arb_noise_scale must be non-negative")
    tm = time_model or TimeModel()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_dates
    dt = 1.0 / 252.0

    # underlying: close-to-close GBM, open is an overnight fraction of the move
    z = rng.standard_normal(n)
    log_ret = (cfg.drift - 0.5 * cfg.vol**2) * dt + cfg.vol * math.sqrt(dt) * z
    close = cfg.S0 * np.exp(np.cumsum(log_ret))
    prev_close = np.concatenate([[cfg.S0], close[:-1]])
    gap = rng.uniform(0.2, 0.5, n)
    open_ = prev_close * np.exp(gap * np.log(close / prev_close))
    exc_hi = np.abs(rng.standard_normal(n)) * cfg.intraday_range + 1e-4
    exc_lo = np.abs(rng.standard_normal(n)) * cfg.intraday_range + 1e-4
    high = np.maximum(open_, close) * np.exp(exc_hi)
    low = np.minimum(open_, close) * np.exp(-exc_lo)
    dates = np.arange(1, n + 1)

    eps: dict[tuple, float] = {}
    strikes_by_mat: dict[int, set] = {}
    rho = cfg.arb_ar1
    innov = cfg.arb_noise_scale * math.sqrt(max(1.0 - rho**2, 0.0))
    rows = []
    for i, t in enumerate(dates):
        first_exp = cfg.expiry_every * (t // cfg.expiry_every + 1)
        for k in range(cfg.n_listed_maturities):
            lo_k = cfg.strike_step * math.ceil(open_[i] * (1 - cfg.strike_band) / cfg.strike_step)
            hi_k = cfg.strike_step * math.floor(open_[i] * (1 + cfg.strike_band) / cfg.strike_step)
            band = np.round(np.arange(lo_k, hi_k + 0.5 * cfg.strike_step, cfg.strike_step), 8)
            strikes_by_mat.setdefault(first_exp + k * cfg.expiry_every, set()).update(band.tolist())

        M_list, K_list, e_list = [], [], []
        for m in sorted(strikes_by_mat):
            if m <= t:
                continue
            for k in sorted(strikes_by_mat[m]):
                key = (m, k)
                if key in eps:
                    e = rho * eps[key] + innov * rng.standard_normal()
                else:
                    e = cfg.arb_noise_scale * rng.standard_normal()
                eps[key] = e
                M_list.append(m)
                K_list.append(k)
                e_list.append(e)
        M = np.array(M_list)
        K = np.array(K_list)
        mult = np.exp(np.array(e_list))
        spot = {"open": open_[i], "high": high[i], "low": low[i], "close": close[i]}
        ohlc, spot["low"], spot["high"] = _day_quotes(cfg, tm, t, spot, M, K, mult)
        low[i], high[i] = spot["low"], spot["high"]

        money = np.abs(np.log(close[i] / K))
        p_trade = cfg.trade_prob_atm / (1.0 + np.exp((money - cfg.trade_moneyness_mid) / cfg.trade_moneyness_scale))
        for typ in ("PT", "CL"):
            o_, h_, l_, c_ = ohlc[typ]
            traded = rng.random(len(K)) < p_trade
            for j in range(len(K)):
                rows.append((int(t), typ, int(M[j]), float(K[j]), o_[j], h_[j], l_[j], c_[j], bool(traded[j])))
    underlying = pd.DataFrame({"open": open_, "high": high, "low": low, "close": close}, index=dates)
    underlying.index.name = "date"
    quotes = pd.DataFrame(rows, columns=list(CHAIN_COLUMNS))
    return ChainTable(quotes, underlying, tm)


def _day_quotes(cfg, tm, t, spot, M, K, mult, max_rounds: int = 50):
    """Value one day's options and widen the spot range until high/low pairs are parity-consistent.

    The feasible shift interval of the spot-low pair in ``_option_ohlc`` grows
    one-for-one (up to discounting) as the spot low decreases, and likewise for
    the spot high, so the extremes are pushed outward by the largest shortfall.
    """
    spot = dict(spot)
    for _ in range(max_rounds):
        val = {}
        for typ in ("PT", "CL"):
            for fld in OHLC:
                T = (tm.maturity_time(M) - tm.at(t, fld)) / 252.0
                v = bs_price(spot[fld], K, T, cfg.rate, cfg.vol, typ)
                val[typ, fld] = v * mult if typ == "PT" else v
        lack_lo, lack_hi = _pair_shortfall(val)
        if lack_lo <= 0 and lack_hi <= 0:
            break
        if lack_lo > 0:
            spot["low"] -= 1.01 * lack_lo + 1e-12 * spot["low"]
        if lack_hi > 0:
            spot["high"] += 1.01 * lack_hi + 1e-12 * spot["high"]
    return _option_ohlc(val), spot["low"], spot["high"]


def _pair_shortfall(val: dict) -> tuple[float, float]:
    P = {f: val["PT", f] for f in OHLC}
    C = {f: val["CL", f] for f in OHLC}
    if len(P["open"]) == 0:
        return 0.0, 0.0
    gap_lo = (np.maximum.reduce([P[f] for f in ("open", "close", "high")]) - P["low"]
              - (np.minimum.reduce([C[f] for f in ("open", "close", "high")]) - C["low"]))
    gap_hi = (P["high"] - np.minimum.reduce([P[f] for f in ("open", "close", "low")])
              - (C["high"] - np.maximum.reduce([C[f] for f in ("open", "close", "low")])))
    return float(gap_lo.max()), float(gap_hi.max())


def _option_ohlc(val: dict) -> dict:
    """Daily put/call OHLC from values at the four spot observations.

    The put high and call low come from the spot-low observation, the put low
    and call high from the spot-high one.  Each pair is moved by one common
    amount, as close to zero as possible, until it brackets the other quotes.
    A common move leaves call - put (and the implied discount factor) intact;
    a feasible move exists whenever the synthetic long is cheapest at the
    spot-low point and dearest at the spot-high point, which holds without
    mispricing.  Otherwise the call side is clamped.
    """
    P = {f: val["PT", f] for f in OHLC}
    C = {f: val["CL", f] for f in OHLC}
    others = ("open", "close", "high")
    lo = np.maximum.reduce([P[f] for f in others]) - P["low"]
    hi = np.minimum.reduce([C[f] for f in others]) - C["low"]
    up = np.clip(0.0, lo, np.maximum(lo, hi))
    put_hi, call_lo = P["low"] + up, C["low"] + up

    others = ("open", "close", "low")
    lo = P["high"] - np.minimum.reduce([P[f] for f in others])
    hi = C["high"] - np.maximum.reduce([C[f] for f in others])
    down = np.clip(0.0, lo, np.maximum(lo, hi))
    put_lo, call_hi = P["high"] - down, C["high"] - down

    # rounding guard; only bites on premiums many orders below a tick
    put_hi = np.maximum.reduce([put_hi, P["open"], P["close"]])
    put_lo = np.minimum.reduce([put_lo, P["open"], P["close"]])
    call_lo = np.minimum.reduce([call_lo, C["open"], C["close"]])
    call_hi = np.maximum.reduce([call_hi, C["open"], C["close"], call_lo])
    return {"PT": (P["open"], put_hi, put_lo, P["close"]),
            "CL": (C["open"], call_hi, call_lo, C["close"])}


# walk-forward splits

@dataclass
class SplitRound:
    index: int
    train: list[int]
    val: list[int]
    test: list[int]
    test_start: int = 0
    test_stop: int | None = None   # exclusive; None means open-ended


@dataclass
class SplitPlan:
    fit_dates: list            # strictly increasing, last element math.inf
    p_val: float
    seed: int
    rounds: list[SplitRound] = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        d["fit_dates"] = [None if math.isinf(x) else int(x) for x in self.fit_dates]
        return json.dumps(d, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        d = json.loads(text)
        fit = [math.inf if x is None else int(x) for x in d["fit_dates"]]
        rounds = [SplitRound(**r) for r in d["rounds"]]
        return cls(fit, d["p_val"], d["seed"], rounds)

    def round_of(self, date: int) -> SplitRound | None:
        for r in self.rounds:
            if date >= r.test_start and (r.test_stop is None or date < r.test_stop):
                return r
        return None


def make_splits(fit_dates, p_val: float, seed: int, last_date: int | None = None) -> SplitPlan:
    """Walk-forward rounds: test = [t_i, t_{i+1}), train/val a random split of [1, t_i).

    The open-ended last test window is truncated at ``last_date`` when given
    (and left empty otherwise).
    """
    if not 0.0 < p_val < 1.0:
        raise ValueError("p_val must lie in (0, 1)")
    fit = list(fit_dates)
    if not fit or not math.isinf(fit[-1]):
        raise ValueError("fit_dates must end with infinity")
    if any(b <= a for a, b in zip(fit, fit[1:])):
        raise ValueError("fit_dates must be strictly increasing")
    if fit[0] < 2:
        raise ValueError("first fit date must leave at least one training date")
    rng = np.random.default_rng(seed)
    rounds = []
    for i, (start, stop) in enumerate(zip(fit[:-1], fit[1:]), start=1):
        start = int(start)
        stop = None if math.isinf(stop) else int(stop)
        hi = stop
        if last_date is not None:
            hi = last_date + 1 if hi is None else min(hi, last_date + 1)
        test = list(range(start, hi)) if hi is not None else []
        prior = np.arange(1, start)
        n_val = int(round(p_val * len(prior)))
        val = np.sort(rng.choice(prior, size=n_val, replace=False)) if n_val else np.array([], int)
        train = np.setdiff1d(prior, val)
        rounds.append(SplitRound(i, train.tolist(), val.tolist(), test, start, stop))
    return SplitPlan(fit, p_val, seed, rounds)


# quantile scaling

class QuantileScaler:
    """Per-feature probability-integral transform followed by the normal quantile.

    The empirical CDF at a training value x is ``#(train <= x) / (n + 1)``,
    interpolated linearly between training values and clipped to
    ``[1/(n+1), n/(n+1)]``.
    """

    def __init__(self):
        self.support: list[np.ndarray] = []
        self.cdf: list[np.ndarray] = []
        self.constant: list[bool] = []

    @property
    def n_features(self):
        return len(self.support)

    def fit(self, rows) -> "QuantileScaler":
        X = np.asarray(rows, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        self.support, self.cdf, self.constant = [], [], []
        for j in range(X.shape[1]):
            col = X[:, j]
            col = np.sort(col[~np.isnan(col)])
            n = len(col)
            uniq, counts = np.unique(col, return_counts=True)
            if len(uniq) < 2:
                warnings.warn(f"feature {j} is constant on the training rows; passing it through")
                self.support.append(uniq)
                self.cdf.append(np.array([]))
                self.constant.append(True)
                continue
            cdf = np.cumsum(counts) / (n + 1.0)
            self.support.append(uniq)
            self.cdf.append(np.clip(cdf, 1.0 / (n + 1), n / (n + 1.0)))
            self.constant.append(False)
        return self

    def transform(self, rows) -> np.ndarray:
        X = np.asarray(rows, dtype=float)
        squeeze = X.ndim == 1
        if squeeze:
            X = X[:, None]
        out = np.empty_like(X)
        for j in range(X.shape[1]):
            if self.constant[j]:
                out[:, j] = X[:, j]
                continue
            u = np.interp(X[:, j], self.support[j], self.cdf[j])
            out[:, j] = ndtri(u)
        return out[:, 0] if squeeze else out

    def inverse_transform(self, rows) -> np.ndarray:
        Z = np.asarray(rows, dtype=float)
        squeeze = Z.ndim == 1
        if squeeze:
            Z = Z[:, None]
        out = np.empty_like(Z)
        for j in range(Z.shape[1]):
            if self.constant[j]:
                out[:, j] = Z[:, j]
                continue
            out[:, j] = np.interp(ndtr(Z[:, j]), self.cdf[j], self.support[j])
        return out[:, 0] if squeeze else out

    def state_dict(self) -> dict:
        return {"support": [s.tolist() for s in self.support],
                "cdf": [c.tolist() for c in self.cdf],
                "constant": list(self.constant)}

    @classmethod
    def from_state(cls, state: dict) -> "QuantileScaler":
        s = cls()
        s.support = [np.asarray(v, float) for v in state["support"]]
        s.cdf = [np.asarray(v, float) for v in state["cdf"]]
        s.constant = list(state["constant"])
        return s


def fit_scaler(train_rows) -> QuantileScaler:
    return QuantileScaler().fit(train_rows)


def apply_scaler(scaler: QuantileScaler, rows) -> np.ndarray:
    return scaler.transform(rows)
