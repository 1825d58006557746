import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _instances import atm_closure_ok, random_universe_problem
from optarb.market_core import AssetId
from optarb.universe import (TradabilityModel, UniverseSolution, build_problem, check_feasible,
                             default_radii, enumerate_universe, fit_tradability, load_solutions,
                             save_solutions, solve_universe, tradability_features)


def test_radius_grid():
    r = default_radii()
    assert len(r) == 50 and r[0] > 0 and r[-1] == pytest.approx(0.1)
    assert np.allclose(np.diff(r), 0.002)


def test_tradability_examples(rng):
    X = rng.random((30, 2))
    m = TradabilityModel(0.05, X, np.ones(30))
    assert np.all(m.predict(rng.random((10, 2))) == 1)
    labels = (np.arange(30) % 2).astype(float)
    big = TradabilityModel(10.0, X, labels)
    assert np.allclose(big.predict(rng.random((5, 2))), labels.mean())


def test_tradability_falls_back_to_five_nearest():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0], [50.0, 0.0]])
    y = np.array([1, 1, 0, 0, 1, 0], float)
    m = TradabilityModel(0.01, X, y)
    assert m.predict([[-1.0, 0.0]])[0] == pytest.approx(0.6)
    assert m.predict([[3.0, 0.0]])[0] == 0.0


def test_fit_tradability_picks_a_separating_radius(rng):
    X = rng.random((400, 2))
    y = (X[:, 0] > 0.5).astype(float)
    Xv = rng.random((200, 2))
    yv = (Xv[:, 0] > 0.5).astype(float)
    m = fit_tradability(X, y, Xv, yv)
    assert m.radius in default_radii()
    assert m.val_error < 0.1
    with pytest.raises(ValueError):
        fit_tradability(np.zeros((0, 2)), [], Xv, yv)


def test_tradability_features():
    f = tradability_features(100.0, [80.0, 125.0], [30, 40], 10)
    assert f.tolist() == [[1.25, 20.0], [0.8, 30.0]]


def _problem(strikes, mu, p, spot=100.0, mat=20, dk=5.0):
    return build_problem([AssetId.sl(mat, k) for k in strikes], mu, p, dk, spot)


def test_spec_example_selects_100_and_105():
    sol = solve_universe(_problem([95, 100, 105], [0.5, 0.9, 0.8], 2))
    assert [a.strike for a in sol.selected] == [100.0, 105.0]
    assert sol.trace == [2] and sol.objective == pytest.approx(1.7)


def test_atm_has_no_predecessor_and_singletons_are_infeasible():
    pr = _problem([95, 100, 105], [0.5, 0.9, 0.8], 2)
    atm = [pr.candidates[i].strike for i in pr.atm]
    assert atm == [100.0] and 1 not in pr.n_atm
    # a maturity with a single pick is rejected
    two_mats = build_problem([AssetId.sl(20, 100), AssetId.sl(20, 105), AssetId.sl(30, 100)],
                             [1, 1, 1], 3, 5.0, 100.0)
    assert not check_feasible(two_mats, [0, 1, 2])


def test_far_pair_excluded():
    pr = _problem([90, 100, 112.5], [1, 1, 1], 2, spot=100.0, dk=5.0)
    far = {(pr.candidates[i].strike, pr.candidates[j].strike) for i, j in pr.far_pairs}
    assert (100.0, 112.5) in far
    assert not check_feasible(pr, [1, 2])


def test_fallback_trace_decrements():
    sol = solve_universe(_problem([100, 105, 130], [1, 1, 1], 3, dk=5.0))
    assert sol.trace == [3, 2] and sol.cardinality == 2
    none = solve_universe(_problem([100], [1], 2))
    assert not none.feasible and none.selected == [] and none.trace == [2]


def test_tie_break_is_lexicographic():
    sol = solve_universe(_problem([95, 100, 105], [1, 1, 1], 2))
    assert [a.strike for a in sol.selected] == [95.0, 100.0]


@given(st.integers(0, 10**6))
def test_solver_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    cands, mu, p, dk, spot = random_universe_problem(rng)
    pr = build_problem(cands, mu, p, dk, spot)
    sol = solve_universe(pr, min_size=p)
    ref_sel, ref_val = enumerate_universe(pr)
    if ref_sel is None:
        assert not sol.feasible
        return
    idx = [pr.candidates.index(a) for a in sol.selected]
    assert sol.objective == pytest.approx(ref_val, abs=1e-9)
    assert sorted(idx) == sorted(ref_sel)
    assert atm_closure_ok(pr, idx)
    assert check_feasible(pr, idx)


@given(st.integers(0, 10**6))
def test_solution_invariants_hold(seed):
    rng = np.random.default_rng(seed)
    cands, mu, p, dk, spot = random_universe_problem(rng, max_candidates=25)
    pr = build_problem(cands, mu, p, dk, spot)
    sol = solve_universe(pr)
    if not sol.feasible:
        return
    idx = [pr.candidates.index(a) for a in sol.selected]
    assert atm_closure_ok(pr, idx)
    counts = {}
    for a in sol.selected:
        counts[a.maturity] = counts.get(a.maturity, 0) + 1
    assert all(c >= 2 for c in counts.values())
    assert not any(i in idx and j in idx for i, j in pr.far_pairs)
    assert sol.cardinality == sol.trace[-1]
    assert sol.trace == list(range(p, sol.cardinality - 1, -1))


def test_solutions_round_trip(tmp_path):
    sol = solve_universe(_problem([95, 100, 105], [0.5, 0.9, 0.8], 2))
    save_solutions([sol.to_record(7)], tmp_path / "u.jsonl")
    back = load_solutions(tmp_path / "u.jsonl")[7]
    assert back.selected == sol.selected and back.trace == sol.trace
    assert UniverseSolution.from_record(sol.to_record(7)).objective == sol.objective
