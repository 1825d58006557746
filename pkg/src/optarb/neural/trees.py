"""Oblivious decision trees: the hard version, the differentiable version and stacked ensembles."""
from __future__ import annotations

import itertools

import torch
from torch import nn

from .entmax import entmax_alpha, sigma_alpha


def odt_forward(x: torch.Tensor, s: torch.Tensor, b: torch.Tensor, R: torch.Tensor) -> torch.Tensor:
    """Hard oblivious tree.

    ``x``: (batch, p); ``s``: (d, p) one-hot rows; ``b``: (d,); ``R``: d-fold
    (2, ..., 2) responses.  Level i goes to branch 0 when s_i.x - b_i > 0,
    otherwise to branch 1.
    """
    go_second = ((x @ s.T - b) <= 0).long()          # (batch, d)
    d = s.shape[0]
    weights = 2 ** torch.arange(d - 1, -1, -1, device=x.device)
    flat = (go_second * weights).sum(-1)
    return R.reshape(-1)[flat]


def leaf_weights(c: torch.Tensor) -> torch.Tensor:
    """Outer product of [c_k, 1 - c_k] over the last axis (depth) -> (..., 2**d).

    Leaf order matches ``R.reshape(-1)`` with the first level most significant.
    """
    out = torch.ones_like(c[..., :1])
    for k in range(c.shape[-1]):
        ck = c[..., k:k + 1]
        pair = torch.stack([ck, 1 - ck], dim=-1)            # (..., 1, 2)
        out = (out.unsqueeze(-1) * pair).flatten(-2)
    return out


def leaf_paths(d: int):
    """All branch tuples in leaf order, for reference implementations."""
    return list(itertools.product((0, 1), repeat=d))


class DDT(nn.Module):
    """Differentiable oblivious tree with entmax feature selection and entmax splits."""

    def __init__(self, in_features: int, depth: int, alpha: float = 1.5):
        super().__init__()
        self.depth, self.alpha = depth, alpha
        self.selector = nn.Parameter(torch.randn(depth, in_features) * 0.1)
        self.threshold = nn.Parameter(torch.zeros(depth))
        self.scale = nn.Parameter(torch.ones(depth))
        self.response = nn.Parameter(torch.randn((2,) * depth) * 0.1)

    def gates(self, x: torch.Tensor) -> torch.Tensor:
        if torch.any(self.scale == 0):
            raise ValueError("split scale must be non-zero")
        chosen = x @ entmax_alpha(self.selector, self.alpha).T     # (batch, d)
        return sigma_alpha((chosen - self.threshold) / self.scale, self.alpha)

    def choice(self, x: torch.Tensor) -> torch.Tensor:
        return leaf_weights(self.gates(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.choice(x) @ self.response.reshape(-1)


class NodeLayer(nn.Module):
    def __init__(self, in_features: int, n_trees: int, depth: int, alpha: float = 1.5):
        super().__init__()
        self.in_features = in_features
        self.trees = nn.ModuleList(DDT(in_features, depth, alpha) for _ in range(n_trees))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_features:
            raise ValueError(f"expected width {self.in_features}, got {x.shape[-1]}")
        return torch.stack([t(x) for t in self.trees], dim=-1)


class NODE(nn.Module):
    """Densely connected stack: layer l sees the input and every earlier layer's trees."""

    def __init__(self, in_features: int, n_layers: int, n_trees: int, depth: int, alpha: float = 1.5):
        super().__init__()
        self.layers = nn.ModuleList(
            NodeLayer(in_features + l * n_trees, n_trees, depth, alpha) for l in range(n_layers))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z, total = x, 0.0
        for layer in self.layers:
            out = layer(z)
            total = total + out.sum(-1)
            z = torch.cat([z, out], dim=-1)
        return total
