"""Experiment configuration: nested dataclasses loaded from YAML with dotted overrides."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import yaml

from .data_io import SyntheticMarketConfig
from .trainer import TrainConfig


@dataclass
class UniverseConfig:
    p_univ: int = 16
    dk_max: float | None = None      # None: twice the strike step
    n_radii: int = 50
    max_radius: float = 0.1


@dataclass
class SplitConfig:
    fit_dates: list = field(default_factory=lambda: [301, 431])   # infinity is appended
    p_val: float = 0.2


@dataclass
class BacktestConfig:
    cost_rate: float = 0.0009
    strategies: list = field(default_factory=lambda: ["SA", "BM1", "BM2"])
    cosine_window: int = 63


@dataclass
class ExperimentConfig:
    seed: int = 0
    market: SyntheticMarketConfig = field(default_factory=SyntheticMarketConfig)
    universe: UniverseConfig = field(default_factory=UniverseConfig)
    splits: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    p_dg: float = 1 / 3
    archs: list = field(default_factory=lambda: ["RNC"])

    @property
    def fit_dates(self) -> list:
        return [int(x) for x in self.splits.fit_dates] + [math.inf]

    @property
    def dk_max(self) -> float:
        if self.universe.dk_max is not None:
            return float(self.universe.dk_max)
        return 2.0 * self.market.strike_step

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"]["depth_grid"] = list(self.train.depth_grid)
        d["train"]["param_targets"] = list(self.train.param_targets)
        return d


def _build(cls, data: dict):
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, val in (data or {}).items():
        if key not in names:
            raise KeyError(f"unknown config key {cls.__name__}.{key}")
        sub = names[key].default_factory if names[key].default_factory is not dataclasses.MISSING else None
        if isinstance(val, dict) and sub is not None and dataclasses.is_dataclass(sub()):
            kwargs[key] = _build(type(sub()), val)
        elif isinstance(val, list) and key in ("depth_grid", "param_targets"):
            kwargs[key] = tuple(val)
        else:
            kwargs[key] = val
    return cls(**kwargs)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """``a.b=value`` assignments; values are parsed as YAML scalars."""
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override must look like key=value: {item!r}")
        path, raw = item.split("=", 1)
        node = data
        keys = path.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = yaml.safe_load(raw)
    return data


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    data = apply_overrides(data, overrides or [])
    cfg = _build(ExperimentConfig, data)
    if "seed" in (data.get("market") or {}):
        return cfg
    cfg.market.seed = cfg.seed
    return cfg


def dump_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
