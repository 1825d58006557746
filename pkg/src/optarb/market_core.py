"""Time model, asset identifiers, pricing identities and the arbitrage target.

Times live on a continuous axis where the integer part is the trading-date
index and the fractional part is the time of day as a fraction of 24h.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

DAYS_PER_YEAR = 252.0


class AssetType(str, enum.Enum):
    UI = "UI"
    PT = "PT"
    CL = "CL"
    SL = "SL"
    LS = "LS"
    SA = "SA"
    RF = "RF"


def clock_fraction(hh: int, mm: int = 0, ss: int = 0) -> float:
    return (hh * 3600 + mm * 60 + ss) / 86400.0


@dataclass(frozen=True)
class TimePoint:
    trading_date: int
    intraday_fraction: float = 0.0

    def __post_init__(self):
        if self.trading_date < 1:
            raise ValueError("trading_date must be a positive integer")
        if not 0.0 <= self.intraday_fraction < 1.0:
            raise ValueError("intraday_fraction must lie in [0, 1)")

    @property
    def value(self) -> float:
        return self.trading_date + self.intraday_fraction

    def __float__(self) -> float:
        return self.value

    def floor(self) -> int:
        return self.trading_date

    @classmethod
    def from_clock(cls, t: int, hh: int, mm: int = 0, ss: int = 0) -> "TimePoint":
        return cls(t, clock_fraction(hh, mm, ss))


@dataclass(frozen=True)
class TimeModel:
    """Clock times of the open/high/low/close observations of each day.

    The high and low of a day happen at unknown moments; fixed representative
    times are used so that every quote maps to a point on the time axis.
    """

    open_clock: tuple = (9, 0, 0)
    high_clock: tuple = (11, 0, 0)
    low_clock: tuple = (13, 0, 0)
    close_clock: tuple = (15, 45, 0)

    def o(self, t: int) -> float:
        return t + clock_fraction(*self.open_clock)

    def h(self, t: int) -> float:
        return t + clock_fraction(*self.high_clock)

    def l(self, t: int) -> float:  # noqa: E741
        return t + clock_fraction(*self.low_clock)

    def c(self, t: int) -> float:
        return t + clock_fraction(*self.close_clock)

    def at(self, t: int, field: str) -> float:
        return {"open": self.o, "high": self.h, "low": self.l, "close": self.c}[field](t)

    def maturity_time(self, maturity_date: int) -> float:
        # options expire at the close of their maturity date
        return self.c(maturity_date)


@dataclass(frozen=True, order=True)
class AssetId:
    """(type; maturity, strike). Maturity is stored as its trading-date index."""

    asset_type: AssetType
    maturity: int | None = None
    strike: float | None = None

    def __post_init__(self):
        optionlike = self.asset_type in (AssetType.PT, AssetType.CL, AssetType.SL)
        has_params = self.maturity is not None and self.strike is not None
        if optionlike and not has_params:
            raise ValueError(f"{self.asset_type.value} requires maturity and strike")
        if self.asset_type is AssetType.UI and (self.maturity is not None or self.strike is not None):
            raise ValueError("UI carries neither maturity nor strike")
        if optionlike and self.strike <= 0:
            raise ValueError("strike must be positive")

    @property
    def key(self) -> tuple[int, float]:
        return (self.maturity, self.strike)

    @classmethod
    def sl(cls, maturity: int, strike: float) -> "AssetId":
        return cls(AssetType.SL, int(maturity), float(strike))


@dataclass(frozen=True)
class OptionQuote:
    asset: AssetId
    date: int
    open: float
    high: float
    low: float
    close: float
    traded: bool = True

    def __post_init__(self):
        if not self.low <= min(self.open, self.close) <= max(self.open, self.close) <= self.high:
            raise ValueError(f"OHLC ordering violated for {self.asset} on {self.date}")


@dataclass(frozen=True)
class DiscountObservation:
    asset: AssetId
    tau: float
    delta: float
    delta_bar: float
    y: float


def year_fraction(maturity: float, tau: float, days_per_year: float = DAYS_PER_YEAR) -> float:
    return (float(maturity) - float(tau)) / days_per_year


def present_value(face, maturity, tau, rate):
    """Value at ``tau`` of ``face`` paid at ``maturity`` under a constant rate.

    ``maturity - tau`` is taken in the rate's time unit.
    """
    horizon = float(maturity) - float(tau)
    if horizon < 0:
        raise ValueError("maturity precedes valuation time")
    return face * math.exp(-rate * horizon)


def synthetic_long_price(put_price, call_price):
    return call_price - put_price


def discount_factor(S, sl_price, K):
    """Face-1 zero-coupon bond price implied by 1/K underlying short 1/K synthetic long."""
    if np.any(np.asarray(K) <= 0):
        raise ValueError("strike must be positive")
    return (S - sl_price) / K


def arbitrage_target(deltas_by_maturity: Mapping, tau: float = float("nan")) -> list[DiscountObservation]:
    """Demean discount factors within each maturity group.

    ``deltas_by_maturity`` maps maturity -> list of (asset, delta).  Only the
    assets passed in contribute to the group mean, so callers restrict the
    groups to the universe assets traded on the prior date.
    """
    out = []
    for maturity in sorted(deltas_by_maturity):
        group = list(deltas_by_maturity[maturity])
        if not group:
            raise ValueError(f"empty maturity group {maturity}")
        dbar = math.fsum(d for _, d in group) / len(group)
        for asset, d in group:
            out.append(DiscountObservation(asset, tau, d, dbar, d - dbar))
    return out


def demean_by_group(values: np.ndarray, groups: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised group demeaning; NaN entries are excluded from the means and stay NaN."""
    values = np.asarray(values, dtype=float)
    groups = np.asarray(groups)
    means = np.full_like(values, np.nan)
    for g in np.unique(groups):
        mask = groups == g
        ok = mask & ~np.isnan(values)
        if ok.any():
            means[mask] = values[ok].mean()
    return values - means, means


# Black-Scholes

def bs_price(S, K, T, rate, sigma, opt_type):
    """European Black-Scholes price. ``opt_type`` is "PT"/"CL" (or AssetType)."""
    S, K, T, sigma = (np.asarray(a, dtype=float) for a in (S, K, T, sigma))
    is_call = _is_call(opt_type)
    disc = np.exp(-rate * T)
    with np.errstate(divide="ignore", invalid="ignore"):
        vol_sqrt = sigma * np.sqrt(T)
        d1 = (np.log(S / K) + (rate + 0.5 * sigma**2) * T) / vol_sqrt
        d2 = d1 - vol_sqrt
        call = S * ndtr(d1) - K * disc * ndtr(d2)
        put = K * disc * ndtr(-d2) - S * ndtr(-d1)
    # zero horizon or zero vol: discounted intrinsic
    fwd_call = np.maximum(S - K * disc, 0.0)
    fwd_put = np.maximum(K * disc - S, 0.0)
    degenerate = ~(vol_sqrt > 0)
    call = np.where(degenerate, fwd_call, call)
    put = np.where(degenerate, fwd_put, put)
    out = np.where(is_call, call, put)
    return float(out) if out.ndim == 0 else out


def _is_call(opt_type):
    if isinstance(opt_type, (str, AssetType)):
        return AssetType(opt_type) is AssetType.CL
    return np.array([AssetType(o) is AssetType.CL for o in opt_type])


def price_bounds(S, K, T, rate, opt_type):
    """No-arbitrage (lower, upper) premium bounds for a European option."""
    disc = np.exp(-rate * np.asarray(T, dtype=float))
    S = np.asarray(S, dtype=float)
    K = np.asarray(K, dtype=float)
    is_call = _is_call(opt_type)
    lower = np.where(is_call, np.maximum(S - K * disc, 0.0), np.maximum(K * disc - S, 0.0))
    upper = np.where(is_call, S, K * disc)
    return lower, upper


IV_LOW, IV_HIGH = 1e-4, 5.0


def implied_volatility(price, S, K, tau, M, rate, opt_type, *, days_per_year=DAYS_PER_YEAR,
                       price_tol=1e-8, max_iter=200):
    """Black-Scholes implied vol by bracketed bisection on [1e-4, 5].

    Vectorised over arrays. Returns NaN where the price is not strictly inside
    the no-arbitrage bounds or not attainable within the bracket.
    """
    price = np.asarray(price, dtype=float)
    T = (np.asarray(M, dtype=float) - np.asarray(tau, dtype=float)) / days_per_year
    S_, K_, T_, P_ = np.broadcast_arrays(np.asarray(S, float), np.asarray(K, float), T, price)
    lower, upper = price_bounds(S_, K_, T_, rate, opt_type)
    valid = (T_ > 0) & (P_ > lower) & (P_ < upper)

    lo = np.full(P_.shape, IV_LOW)
    hi = np.full(P_.shape, IV_HIGH)
    p_lo = bs_price(S_, K_, T_, rate, lo, opt_type)
    p_hi = bs_price(S_, K_, T_, rate, hi, opt_type)
    valid &= (P_ >= p_lo) & (P_ <= p_hi)

    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        p_mid = bs_price(S_, K_, T_, rate, mid, opt_type)
        above = p_mid > P_
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        if np.all(np.abs(p_mid - P_)[valid] <= price_tol) and np.all((hi - lo)[valid] < 1e-12):
            break
    sigma = np.where(valid, mid, np.nan)
    return float(sigma) if sigma.ndim == 0 else sigma
