"""Position algebra: constraint matrices, projections, normalisation and cash flows.

A position holds ``n_a`` synthetic longs (long call, short put) per universe
asset plus ``m`` units of the underlying with ``m + sum(n) = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .market_core import AssetId

KINDS = ("LS", "SA", "BM1", "BM2")
NULL_RCOND = 1e-10


@dataclass
class Position:
    universe: list[AssetId]
    n: np.ndarray
    kind: str = "SA"
    degenerate: bool = False

    def __post_init__(self):
        self.n = np.asarray(self.n, float)
        if len(self.n) != len(self.universe):
            raise ValueError("contract vector and universe differ in length")
        if self.kind not in KINDS:
            raise ValueError(f"unknown position kind {self.kind!r}")

    @property
    def m(self) -> float:
        """Underlying units implied by the long-short balance."""
        return -math.fsum(self.n)

    @property
    def strikes(self) -> np.ndarray:
        return np.array([a.strike for a in self.universe], float)

    @property
    def maturities(self) -> np.ndarray:
        return np.array([a.maturity for a in self.universe], int)

    def maturity_sums(self) -> dict[int, tuple[float, float]]:
        """Per maturity: (sum n, sum K n)."""
        out = {}
        for mat in np.unique(self.maturities):
            sel = self.maturities == mat
            out[int(mat)] = (math.fsum(self.n[sel]), math.fsum(self.n[sel] * self.strikes[sel]))
        return out


@dataclass
class ConstraintMatrix:
    universe: list[AssetId]
    A: np.ndarray
    N: np.ndarray
    maturities: list[int] = field(default_factory=list)


def build_constraints(universe: list[AssetId]) -> ConstraintMatrix:
    """Two rows per maturity: contract count and strike-weighted count."""
    if not universe:
        raise ValueError("empty universe")
    mats = sorted({a.maturity for a in universe})
    A = np.zeros((2 * len(mats), len(universe)))
    for r, mat in enumerate(mats):
        for j, a in enumerate(universe):
            if a.maturity == mat:
                A[2 * r, j] = 1.0
                A[2 * r + 1, j] = a.strike
    return ConstraintMatrix(list(universe), A, null_space(A, rcond=NULL_RCOND), mats)


def slsa_project(v_hat, cm: ConstraintMatrix) -> Position:
    """Orthogonal projection of predicted payoffs onto the arbitrage-only subspace."""
    v = np.asarray(v_hat, float)
    if v.shape != (len(cm.universe),):
        raise ValueError(f"expected {len(cm.universe)} entries, got shape {v.shape}")
    N = cm.N
    if N.shape[1] == 0:
        return Position(cm.universe, np.zeros_like(v), "SA")
    coef = np.linalg.solve(N.T @ N, N.T @ v)
    return Position(cm.universe, N @ coef, "SA")


def bm_project(v_hat, universe: list[AssetId], kind: str) -> Position:
    """BM1: zero contract sum within each maturity. BM2: zero contract sum overall."""
    v = np.asarray(v_hat, float)
    if v.shape != (len(universe),):
        raise ValueError(f"expected {len(universe)} entries, got shape {v.shape}")
    if kind == "BM2":
        return Position(universe, v - v.mean(), "BM2")
    if kind == "BM1":
        mats = np.array([a.maturity for a in universe])
        n = v.copy()
        for mat in np.unique(mats):
            sel = mats == mat
            n[sel] -= v[sel].mean()
        return Position(universe, n, "BM1")
    raise ValueError(f"unknown benchmark kind {kind!r}")


def normalize_one_long_one_short(pos: Position, tol: float = 1e-15) -> Position:
    """Scale so the long contracts add to one. A position with no longs is flagged and left as is."""
    longs = math.fsum(pos.n[pos.n > 0])
    if longs <= tol:
        return Position(pos.universe, pos.n.copy(), pos.kind, degenerate=True)
    return Position(pos.universe, pos.n / longs, pos.kind)


# prices and cash flows

def ls_price(pos: Position, spot: float, sl_prices) -> float:
    """Mark of the position: m * S + sum n * P(SL)."""
    return pos.m * spot + math.fsum(np.asarray(sl_prices, float) * pos.n)


@dataclass(frozen=True)
class CashFlow:
    date: int
    amount: float
    label: str                  # "inception" or "maturity"
    maturity: int | None = None


def inception_flow(pos: Position, y, delta_bar) -> float:
    """Cash received when the position is built at the open.

    SA: sum n K y.  Others: sum n K (y + delta_bar), i.e. minus the cost of the legs.
    """
    y = np.asarray(y, float)
    K = pos.strikes
    if pos.kind == "SA":
        return math.fsum(pos.n * K * y)
    return math.fsum(pos.n * K * (y + np.asarray(delta_bar, float)))


def maturity_flow(pos: Position, maturity: int, settle_spot: float) -> float:
    """Cash at the expiry of ``maturity``: sum over its assets of n (S_M - K), simplified per kind."""
    sel = pos.maturities == maturity
    if not sel.any() or pos.kind == "SA":
        return 0.0
    n, K = pos.n[sel], pos.strikes[sel]
    if pos.kind == "BM1":
        return -math.fsum(n * K)
    return math.fsum(n * (settle_spot - K))


def slsa_cashflows(pos: Position, y, t: int) -> list[CashFlow]:
    """SA flows: the inception payoff, then zero at every expiry."""
    if pos.kind != "SA":
        raise ValueError("slsa_cashflows expects an SA position")
    flows = [CashFlow(t, inception_flow(pos, y, None), "inception")]
    flows += [CashFlow(int(mat), 0.0, "maturity", int(mat)) for mat in np.unique(pos.maturities)]
    return flows


def bm_cashflows(pos: Position, y, delta_bar, t: int, settle_spot: dict) -> list[CashFlow]:
    """Benchmark flows; ``settle_spot`` maps maturity -> underlying close at expiry."""
    flows = [CashFlow(t, inception_flow(pos, y, delta_bar), "inception")]
    for mat in np.unique(pos.maturities):
        flows.append(CashFlow(int(mat), maturity_flow(pos, int(mat), settle_spot[int(mat)]), "maturity", int(mat)))
    return flows
