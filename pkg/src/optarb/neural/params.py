"""Model factory, parameter counting and checkpoints."""
from __future__ import annotations

from typing import Callable

import torch
from torch import nn

from .benchmarks import BenchmarkGNN
from .rnconv import RNConv

CHECKPOINT_FORMAT = "optarb-model/1"
ARCHS = ("RNC", "GCN", "SAGE")


def count_params(model: nn.Module) -> int:
    """Trainable scalars; batch-norm running statistics are buffers and not counted."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def build_model(arch: str, in_features: int, n_layers: int, width: int, tree_depth: int = 3,
                **kw) -> nn.Module:
    """``width`` is the size knob: trees per RNConv layer, or hidden channels for the baselines."""
    if arch == "RNC":
        return RNConv(in_features, n_layers, width, tree_depth, **kw)
    if arch in ("GCN", "SAGE"):
        return BenchmarkGNN(in_features, width, n_layers, conv=arch, **kw)
    raise ValueError(f"unknown architecture {arch!r}")


def match_param_count(count: Callable[[int], int], target: int, lo: int = 1, hi: int = 4096) -> int:
    """Smallest knob value in [lo, hi] whose count is closest to ``target``.

    ``count`` is assumed non-decreasing, so the scan stops once counts pass the target.
    """
    best, best_gap = lo, None
    for k in range(lo, hi + 1):
        c = count(k)
        gap = abs(c - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = k, gap
        if c >= target:
            break
    return best


def size_for(arch: str, in_features: int, n_layers: int, target: int, tree_depth: int = 3) -> int:
    def count(k: int) -> int:
        return count_params(build_model(arch, in_features, n_layers, k, tree_depth))
    return match_param_count(count, target)


def save_checkpoint(model: nn.Module, path, arch: str, hparams: dict, extra: dict | None = None) -> None:
    torch.save({"format": CHECKPOINT_FORMAT, "arch": arch, "hparams": dict(hparams),
                "state_dict": model.state_dict(), "extra": extra or {}}, path)


def load_checkpoint(path) -> tuple[nn.Module, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {blob.get('format')!r}")
    model = build_model(blob["arch"], **blob["hparams"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob
