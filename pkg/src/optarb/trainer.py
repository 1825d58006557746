"""Walk-forward training with grid search over depth and parameter budget."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch
from torch.nn import functional as F

from .data_io import QuantileScaler
from .graphs import ArbGraph
from .neural import build_model, count_params, size_for
from .stats import mse, paired_tests  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    depth_grid: tuple = (3, 4, 5)
    param_targets: tuple = (1_000, 5_000, 10_000)
    tree_depth: int = 3
    lr: float = 1e-3
    max_epochs: int = 40
    patience: int = 6
    graphs_per_batch: int = 8
    seed: int = 0


class SplitAccessLog:
    """Records which split was read, in order, so tests can prove selection never saw test data."""

    def __init__(self):
        self.events: list[str] = []

    def mark(self, event: str):
        self.events.append(event)

    def test_before_selection(self) -> bool:
        if "test" not in self.events:
            return False
        return "select" not in self.events or self.events.index("test") < self.events.index("select")


@dataclass
class RoundData:
    index: int
    _train: list[ArbGraph]
    _val: list[ArbGraph]
    _test: list[ArbGraph]
    p_univ: int = 0
    access: SplitAccessLog = field(default_factory=SplitAccessLog)

    def split(self, name: str) -> list[ArbGraph]:
        self.access.mark(name)
        return {"train": self._train, "val": self._val, "test": self._test}[name]


@dataclass
class RoundResult:
    index: int
    arch: str
    grid: pd.DataFrame                  # one row per cell: n_layers, width, n_params, val_mse
    selected: dict
    val_mse: float
    test_mse: float
    predictions: pd.DataFrame           # date, maturity, strike, y, y_hat
    state_dict: dict | None = None
    hparams: dict | None = None
    scalers: dict | None = None
    p_univ: int = 0
    zero_mse: float = float("nan")


# batching

@dataclass
class Batch:
    x: torch.Tensor
    edges: torch.Tensor
    y: torch.Tensor
    mask: torch.Tensor


def make_batch(graphs: list[ArbGraph], xs: QuantileScaler, ys: QuantileScaler | None) -> Batch:
    """Disjoint union of graphs with scaled features and (if available) scaled targets."""
    x = np.concatenate([g.x for g in graphs])
    offs = np.cumsum([0] + [g.n for g in graphs[:-1]])
    edges = np.concatenate([g.edges + o for g, o in zip(graphs, offs)]) if graphs else np.zeros((0, 2))
    y = np.concatenate([g.y for g in graphs])
    mask = np.isfinite(y)
    y_scaled = np.zeros_like(y)
    if ys is not None and mask.any():
        y_scaled[mask] = ys.transform(y[mask, None])[:, 0]
    return Batch(torch.as_tensor(xs.transform(x)), torch.as_tensor(edges.reshape(-1, 2), dtype=torch.long),
                 torch.as_tensor(y_scaled), torch.as_tensor(mask))


def fit_round_scalers(train: list[ArbGraph]) -> dict:
    xs = QuantileScaler().fit(np.concatenate([g.x for g in train]))
    y = np.concatenate([g.y for g in train])
    ys = QuantileScaler().fit(y[np.isfinite(y), None])
    return {"x": xs, "y": ys}


def predict_graphs(model, graphs: list[ArbGraph], scalers: dict) -> list[np.ndarray]:
    """Raw-unit predictions per graph."""
    model.eval()
    out = []
    with torch.no_grad():
        for g in graphs:
            b = make_batch([g], scalers["x"], None)
            pred = model(b.x, b.edges).numpy()
            out.append(scalers["y"].inverse_transform(pred[:, None])[:, 0])
    return out


def raw_mse(preds: list[np.ndarray], graphs: list[ArbGraph]) -> float:
    p = np.concatenate(preds)
    y = np.concatenate([g.y for g in graphs])
    ok = np.isfinite(y)
    return mse(p[ok], y[ok])


def fit_model(model, train: list[ArbGraph], val: list[ArbGraph], scalers: dict, cfg: TrainConfig, seed: int):
    """Adam on scaled-target MSE; keeps the epoch with the lowest raw validation MSE."""
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    batches = [make_batch(train[i:i + cfg.graphs_per_batch], scalers["x"], scalers["y"])
               for i in range(0, len(train), cfg.graphs_per_batch)]
    batches = [b for b in batches if b.x.shape[0] >= 2 and b.mask.any()]
    if not batches:
        raise ValueError("no usable training batch")
    best, best_state, stale = float("inf"), copy.deepcopy(model.state_dict()), 0
    for epoch in range(cfg.max_epochs):
        model.train()
        for i in torch.randperm(len(batches), generator=gen).tolist():
            b = batches[i]
            opt.zero_grad()
            loss = F.mse_loss(model(b.x, b.edges)[b.mask], b.y[b.mask])
            loss.backward()
            opt.step()
        v = raw_mse(predict_graphs(model, val, scalers), val)
        if v < best - 1e-15:
            best, best_state, stale = v, copy.deepcopy(model.state_dict()), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return best


def train_round(data: RoundData, arch: str, cfg: TrainConfig, in_features: int = 9) -> RoundResult:
    torch.set_default_dtype(torch.float64)
    train, val = data.split("train"), data.split("val")
    if not train or not val:
        raise ValueError("empty train or validation split")
    scalers = fit_round_scalers(train)

    rows, seen, best = [], set(), None
    for n_layers in cfg.depth_grid:
        for target in cfg.param_targets:
            width = size_for(arch, in_features, n_layers, target, cfg.tree_depth)
            if (n_layers, width) in seen:
                continue
            seen.add((n_layers, width))
            seed = cfg.seed * 1000 + len(rows)
            torch.manual_seed(seed)
            model = build_model(arch, in_features, n_layers, width, cfg.tree_depth)
            v = fit_model(model, train, val, scalers, cfg, seed)
            rows.append({"n_layers": n_layers, "target": target, "width": width,
                         "n_params": count_params(model), "val_mse": v})
            log.info("round %d %s layers=%d width=%d val_mse=%.4g", data.index, arch, n_layers, width, v)
            if best is None or v < best[0]:
                best = (v, rows[-1], model)
    data.access.mark("select")
    val_mse, cell, model = best

    test = data.split("test")
    preds = predict_graphs(model, test, scalers) if test else []
    frames = [pd.DataFrame({"date": g.date, "maturity": g.maturities, "strike": g.strikes,
                            "y": g.y, "y_hat": p}) for g, p in zip(test, preds)]
    pred_df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["date", "maturity", "strike", "y", "y_hat"])
    ok = np.isfinite(pred_df["y"].to_numpy(float))
    test_mse = mse(pred_df["y_hat"][ok], pred_df["y"][ok]) if ok.any() else float("nan")
    hparams = {"in_features": in_features, "n_layers": cell["n_layers"],
               "width": cell["width"], "tree_depth": cfg.tree_depth}
    return RoundResult(data.index, arch, pd.DataFrame(rows), dict(cell), val_mse, test_mse, pred_df,
                       copy.deepcopy(model.state_dict()), hparams,
                       {k: s.state_dict() for k, s in scalers.items()}, data.p_univ)


def zero_predictor_mse(graphs: list[ArbGraph]) -> float:
    y = np.concatenate([g.y for g in graphs])
    y = y[np.isfinite(y)]
    return float(np.mean(y**2))
