"""Tradability prediction and per-date universe selection.

The selection program, over binaries ``u_a`` for candidate synthetic longs:

    maximize    sum_a mu_a * u_a
    subject to  sum_a u_a = p_univ
                u_a <= u_{N_atm(a)}              for a not in ATM
                u_a <= v_M,  2 v_M <= sum_{M_a=M} u_a
                u_a + u_a' <= 1                   for (a, a') in N_far

The near-ATM constraint makes every feasible per-maturity selection a set
closed under the "next closer to ATM" map, so the solver enumerates closed
sets per maturity and runs a depth-first branch-and-bound across maturities.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .data_io import QuantileScaler
from .market_core import AssetId

EPS = 1e-12


# tradability

@dataclass
class TradabilityModel:
    radius: float
    points: np.ndarray
    labels: np.ndarray
    fallback_k: int = 5
    scaler: QuantileScaler | None = None
    val_error: float = float("nan")

    def __post_init__(self):
        self.points = np.asarray(self.points, float)
        self.labels = np.asarray(self.labels, float)
        self._tree = cKDTree(self.points)

    def predict(self, X, scaled: bool = True) -> np.ndarray:
        """Mean label inside the radius ball, else mean of the k nearest labels."""
        X = np.atleast_2d(np.asarray(X, float))
        if not scaled and self.scaler is not None:
            X = self.scaler.transform(X)
        balls = self._tree.query_ball_point(X, r=self.radius)
        k = min(self.fallback_k, len(self.points))
        _, nn = self._tree.query(X, k=k)
        nn = np.asarray(nn).reshape(len(X), -1)
        out = np.empty(len(X))
        for i, idx in enumerate(balls):
            out[i] = self.labels[idx].mean() if idx else self.labels[nn[i]].mean()
        return out


def default_radii(n: int = 50, top: float = 0.1) -> np.ndarray:
    return np.linspace(0.0, top, n + 1)[1:]


def fit_tradability(train_X, train_y, val_X, val_y, radii=None, scaler: QuantileScaler | None = None
                    ) -> TradabilityModel:
    """Pick the radius with the lowest validation misclassification at 0.5.

    Inputs are assumed already scaled; ``scaler`` is only carried along so the
    model can score raw features later. Ties go to the smaller radius.
    """
    train_X = np.atleast_2d(np.asarray(train_X, float))
    train_y = np.asarray(train_y, float)
    if len(train_X) == 0:
        raise ValueError("empty training set")
    radii = default_radii() if radii is None else np.asarray(radii, float)
    val_X = np.atleast_2d(np.asarray(val_X, float))
    val_y = np.asarray(val_y, float)
    best = None
    for r in radii:
        model = TradabilityModel(float(r), train_X, train_y, scaler=scaler)
        if len(val_X):
            err = float(np.mean((model.predict(val_X) >= 0.5) != (val_y >= 0.5)))
        else:
            err = 0.0
        if best is None or err < best.val_error - EPS:
            model.val_error = err
            best = model
    return best


def tradability_features(spot_close: float, strikes, maturities, date: int) -> np.ndarray:
    """(moneyness S/K, trading days to maturity) for candidates at decision date ``date``."""
    strikes = np.asarray(strikes, float)
    return np.column_stack([spot_close / strikes, np.asarray(maturities, float) - date])


# selection problem

@dataclass
class UniverseProblem:
    candidates: list[AssetId]          # sorted by (maturity, strike)
    mu: np.ndarray
    p_univ: int
    dk_max: float
    spot: float
    atm: set = field(default_factory=set)
    n_atm: dict = field(default_factory=dict)     # index -> index of next-closer-to-ATM neighbour
    far_pairs: list = field(default_factory=list)  # (i, j) index pairs, i < j

    @property
    def maturities(self) -> list[int]:
        return sorted({a.maturity for a in self.candidates})


@dataclass
class UniverseSolution:
    selected: list[AssetId]
    cardinality: int
    objective: float
    trace: list[int]
    feasible: bool = True

    def to_record(self, date: int) -> dict:
        return {"date": int(date),
                "assets": [[a.maturity, a.strike] for a in self.selected],
                "objective": self.objective,
                "trace": self.trace,
                "feasible": self.feasible}

    @classmethod
    def from_record(cls, rec: dict) -> "UniverseSolution":
        sel = [AssetId.sl(m, k) for m, k in rec["assets"]]
        return cls(sel, len(sel), rec["objective"], rec["trace"], rec.get("feasible", True))


def build_problem(candidates, mu_hat, p_univ: int, dk_max: float, spot: float) -> UniverseProblem:
    if not candidates:
        raise ValueError("no candidates")
    order = sorted(range(len(candidates)), key=lambda i: candidates[i].key)
    cands = [candidates[i] for i in order]
    mu = np.asarray(mu_hat, float)[order]

    atm, n_atm, far = set(), {}, []
    by_mat: dict[int, list[int]] = {}
    for i, a in enumerate(cands):
        by_mat.setdefault(a.maturity, []).append(i)
    for idx in by_mat.values():
        dist = {i: abs(spot - cands[i].strike) for i in idx}
        dmin = min(dist.values())
        atm.update(i for i in idx if dist[i] == dmin)
        for i in idx:
            closer = [j for j in idx if dist[j] < dist[i]]
            if not closer:
                continue
            gap = min(abs(cands[i].strike - cands[j].strike) for j in closer)
            # ties break toward the lower strike; idx is strike-sorted
            n_atm[i] = next(j for j in closer if abs(cands[i].strike - cands[j].strike) == gap)
        # far pairs: the pair's gap equals the larger of the two nearest-neighbour gaps
        if len(idx) >= 2:
            nn_gap = {i: min(abs(cands[i].strike - cands[j].strike) for j in idx if j != i) for i in idx}
            for i, j in itertools.combinations(idx, 2):
                g = abs(cands[i].strike - cands[j].strike)
                if g == max(nn_gap[i], nn_gap[j]) and g > dk_max:
                    far.append((i, j))
    return UniverseProblem(cands, mu, int(p_univ), float(dk_max), float(spot), atm, n_atm, far)


def check_feasible(problem: UniverseProblem, chosen) -> bool:
    """Direct constraint check of an index set (used by tests and the enumerator)."""
    chosen = set(chosen)
    if len(chosen) != problem.p_univ:
        return False
    for i in chosen:
        if i not in problem.atm and problem.n_atm.get(i) not in chosen:
            return False
    counts: dict[int, int] = {}
    for i in chosen:
        m = problem.candidates[i].maturity
        counts[m] = counts.get(m, 0) + 1
    if any(c == 1 for c in counts.values()):
        return False
    return not any(i in chosen and j in chosen for i, j in problem.far_pairs)


def _closed_sets(problem: UniverseProblem, idx: list[int], cap: int) -> list[tuple[float, tuple]]:
    """All far-feasible, N_atm-closed subsets of one maturity with size 0 or 2..cap."""
    children: dict[int, list[int]] = {i: [] for i in idx}
    roots = []
    for i in idx:
        if i in problem.atm or i not in problem.n_atm:
            roots.append(i)
        else:
            children[problem.n_atm[i]].append(i)
    far = {}
    for i, j in problem.far_pairs:
        far.setdefault(i, set()).add(j)
        far.setdefault(j, set()).add(i)

    out = []

    def grow(chosen: list[int], frontier: list[int], start: int):
        # enumerate closed sets by only ever adding nodes whose parent is chosen;
        # the frontier is kept ordered so each set is produced once
        if len(chosen) >= 2 or not chosen:
            out.append((float(sum(problem.mu[i] for i in chosen)), tuple(sorted(chosen))))
        if len(chosen) == cap:
            return
        for pos in range(start, len(frontier)):
            node = frontier[pos]
            if far.get(node, set()) & set(chosen):
                continue
            new_frontier = frontier[:pos] + frontier[pos + 1:] + children[node]
            # nodes before pos are skipped for good in this branch
            grow(chosen + [node], new_frontier, pos)

    grow([], sorted(roots), 0)
    return out


def _lex_key(problem, sel) -> tuple:
    return tuple(problem.candidates[i].key for i in sorted(sel))


def _solve_fixed(problem: UniverseProblem, p: int):
    mats = problem.maturities
    groups = [[i for i, a in enumerate(problem.candidates) if a.maturity == m] for m in mats]
    options = [_closed_sets(problem, g, p) for g in groups]
    # per maturity: best value for each size, for bounding
    best_by_size = []
    for opts in options:
        b = {}
        for val, sel in opts:
            b[len(sel)] = max(b.get(len(sel), -math.inf), val)
        best_by_size.append(b)
    n = len(groups)
    max_size_suffix = [0] * (n + 1)
    for g in range(n - 1, -1, -1):
        max_size_suffix[g] = max_size_suffix[g + 1] + max(best_by_size[g])
    for opts in options:
        opts.sort(key=lambda o: (-o[0], len(o[1])))

    best = {"val": -math.inf, "sel": None}

    def bound(g: int, cap: int) -> float:
        total = 0.0
        for h in range(g, n):
            total += max((v for s, v in best_by_size[h].items() if s <= cap), default=0.0)
        return total

    def dfs(g: int, cap: int, val: float, sel: tuple):
        if cap == 0:
            if val > best["val"] + EPS or (abs(val - best["val"]) <= EPS and
                                           _lex_key(problem, sel) < _lex_key(problem, best["sel"])):
                best["val"], best["sel"] = val, sel
            return
        if g == n or max_size_suffix[g] < cap:
            return
        if val + bound(g, cap) < best["val"] - EPS:
            return
        for v, s in options[g]:
            if len(s) <= cap:
                dfs(g + 1, cap - len(s), val + v, sel + s)

    dfs(0, p, 0.0, ())
    return best["sel"], best["val"]


def solve_universe(problem: UniverseProblem, min_size: int = 2) -> UniverseSolution:
    """Exact optimum; on infeasibility decrement p_univ until a solution exists."""
    trace = []
    for p in range(problem.p_univ, min_size - 1, -1):
        trace.append(p)
        sel, val = _solve_fixed(problem, p)
        if sel is not None:
            chosen = [problem.candidates[i] for i in sorted(sel)]
            return UniverseSolution(chosen, len(chosen), float(val), trace)
    return UniverseSolution([], 0, 0.0, trace, feasible=False)


def enumerate_universe(problem: UniverseProblem, p: int | None = None):
    """Exhaustive optimum over all p-subsets; reference for small instances."""
    p = problem.p_univ if p is None else p
    sub = UniverseProblem(problem.candidates, problem.mu, p, problem.dk_max, problem.spot,
                          problem.atm, problem.n_atm, problem.far_pairs)
    best_val, best_sel = -math.inf, None
    for comb in itertools.combinations(range(len(problem.candidates)), p):
        if not check_feasible(sub, comb):
            continue
        val = float(sum(problem.mu[i] for i in comb))
        if val > best_val + EPS or (abs(val - best_val) <= EPS and
                                    _lex_key(problem, comb) < _lex_key(problem, best_sel)):
            best_val, best_sel = val, comb
    return best_sel, best_val


def save_solutions(records: list[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def load_solutions(path) -> dict[int, UniverseSolution]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["date"]] = UniverseSolution.from_record(rec)
    return out
