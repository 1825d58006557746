import numpy as np
import pandas as pd
import pytest
import torch

from optarb.graphs import ArbGraph
from optarb.market_core import AssetId
from optarb.trainer import (RoundData, SplitAccessLog, TrainConfig, fit_round_scalers, make_batch, predict_graphs,
                            raw_mse, train_round, zero_predictor_mse)

TINY = TrainConfig(depth_grid=(1,), param_targets=(400,), tree_depth=2, max_epochs=100, patience=100,
                   graphs_per_batch=4, lr=1e-2, seed=1)


def _graphs(n_graphs, seed, target=lambda x: 0.01 * x[:, 0] - 0.005 * x[:, 3], x_scale=1.0):
    rng = np.random.default_rng(seed)
    out = []
    for g in range(n_graphs):
        n = int(rng.integers(5, 9))
        nodes = [AssetId.sl(30, 90.0 + 2.5 * i) for i in range(n)]
        e = [(i, i + 1) for i in range(n - 1)] + [(i + 1, i) for i in range(n - 1)]
        x = rng.normal(size=(n, 9)) * x_scale
        out.append(ArbGraph(g, nodes, np.array(e), x, target(x / x_scale), np.zeros(n)))
    return out


def _round(graphs, idx=1):
    return RoundData(idx, graphs[:24], graphs[24:30], graphs[30:])


def test_make_batch_is_a_disjoint_union():
    gs = _graphs(3, 0)
    sc = fit_round_scalers(gs)
    b = make_batch(gs, sc["x"], sc["y"])
    sizes = [g.n for g in gs]
    assert b.x.shape == (sum(sizes), 9)
    assert b.edges[len(gs[0].edges)].tolist() == [sizes[0], sizes[0] + 1]
    assert b.edges.max().item() == sum(sizes) - 1
    assert bool(b.mask.all())


def test_access_log_order_and_prediction_frame():
    data = _round(_graphs(36, 1))
    res = train_round(data, "RNC", TINY)
    assert data.access.events == ["train", "val", "select", "test"]
    assert not data.access.test_before_selection()
    assert list(res.predictions.columns) == ["date", "maturity", "strike", "y", "y_hat"]
    assert len(res.predictions) == sum(g.n for g in data._test)
    assert res.hparams == {"in_features": 9, "n_layers": 1, "width": res.selected["width"], "tree_depth": 2}
    log = SplitAccessLog()
    log.mark("test")
    log.mark("select")
    assert log.test_before_selection()


def test_learns_a_linear_signal():
    data = _round(_graphs(36, 2))
    res = train_round(data, "RNC", TINY)
    assert res.test_mse < 0.5 * zero_predictor_mse(data._test)


def test_constant_zero_target_is_fitted():
    data = _round(_graphs(36, 3, target=lambda x: np.zeros(len(x))))
    res = train_round(data, "RNC", TINY)
    assert res.test_mse <= 1e-6
    assert zero_predictor_mse(data._test) == 0.0


def test_training_is_deterministic():
    a = train_round(_round(_graphs(36, 4)), "SAGE", TINY)
    b = train_round(_round(_graphs(36, 4)), "SAGE", TINY)
    assert a.predictions["y_hat"].to_numpy().tobytes() == b.predictions["y_hat"].to_numpy().tobytes()
    assert a.grid.equals(b.grid)


def test_rank_scaling_makes_units_irrelevant():
    # quantile scaling is rank based: rescaling x leaves predictions unchanged, rescaling y scales them
    base = train_round(_round(_graphs(36, 5)), "GCN", TINY)
    xs = train_round(_round(_graphs(36, 5, x_scale=7.0)), "GCN", TINY)
    assert np.allclose(xs.predictions["y_hat"], base.predictions["y_hat"], rtol=1e-9, atol=1e-15)
    ys = train_round(_round(_graphs(36, 5, target=lambda x: 300 * (0.01 * x[:, 0] - 0.005 * x[:, 3]))), "GCN", TINY)
    assert np.allclose(ys.predictions["y_hat"], 300 * base.predictions["y_hat"], rtol=1e-8)
    assert ys.test_mse == pytest.approx(300**2 * base.test_mse, rel=1e-7)


def test_grid_skips_duplicate_cells():
    cfg = TrainConfig(depth_grid=(1, 2), param_targets=(1, 2), tree_depth=2, max_epochs=2, patience=2, seed=0)
    res = train_round(_round(_graphs(36, 6)), "RNC", cfg)
    assert len(res.grid) == 2
    assert set(res.grid["n_layers"]) == {1, 2}


def test_empty_splits_raise():
    gs = _graphs(10, 7)
    with pytest.raises(ValueError):
        train_round(RoundData(1, gs, [], gs), "GCN", TINY)
    with pytest.raises(ValueError):
        train_round(RoundData(1, [], gs, gs), "GCN", TINY)


def test_empty_test_split_gives_empty_predictions():
    gs = _graphs(30, 8)
    res = train_round(RoundData(1, gs[:24], gs[24:], []), "GCN", TINY)
    assert res.predictions.empty and np.isnan(res.test_mse)


def test_predictions_are_in_raw_units():
    gs = _graphs(36, 9)
    sc = fit_round_scalers(gs[:24])
    model = torch.nn.Module()
    model.forward = lambda x, e: x[:, 0] * 0       # scaled output 0 maps to the target median
    preds = predict_graphs(model, gs[30:], sc)
    med = sc["y"].inverse_transform(np.zeros((1, 1)))[0, 0]
    assert np.allclose(np.concatenate(preds), med)
    assert raw_mse(preds, gs[30:]) == pytest.approx(np.mean((np.concatenate([g.y for g in gs[30:]]) - med) ** 2))
