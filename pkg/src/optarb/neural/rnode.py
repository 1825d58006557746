"""Tree ensemble whose split scores come from a cross network and an MLP."""
from __future__ import annotations

import math

import torch
from torch import nn

from .crossnet import CrossNet
from .entmax import sigma_alpha
from .trees import leaf_weights


def mlp_width(p: int) -> int:
    return max(1, math.ceil(p / 4))


class RNodeLayer(nn.Module):
    """n_trees oblivious trees of depth ``depth`` sharing one score network.

    Scores pass through an affine-free batch norm and ``sigma_alpha(gamma * .)``
    to give one gate per (tree, level).  Output shape: (batch, n_trees).
    """

    def __init__(self, in_features: int, n_trees: int, depth: int, gamma: float = 5.0, alpha: float = 1.5,
                 cross_layers: int = 2, negative_slope: float = 0.01, vbn_momentum: float = 0.1,
                 response_init_std: float = 1.0):
        super().__init__()
        self.in_features, self.n_trees, self.depth = in_features, n_trees, depth
        self.gamma, self.alpha = gamma, alpha
        h = mlp_width(in_features)
        self.cross = CrossNet(in_features, cross_layers, batch_norm=True, negative_slope=negative_slope)
        self.mlp = nn.Sequential(
            nn.Linear(in_features, h), nn.LeakyReLU(negative_slope),
            nn.Linear(h, h), nn.LeakyReLU(negative_slope),
            nn.Linear(h, n_trees * depth, bias=False),
        )
        self.vbn = nn.BatchNorm1d(n_trees * depth, affine=False, momentum=vbn_momentum)
        self.response = nn.Parameter(torch.randn(n_trees, 2**depth) * response_init_std)

    def scores(self, x: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.cross(x))

    def gates(self, x: torch.Tensor) -> torch.Tensor:
        if self.training and x.shape[0] < 2:
            raise ValueError("RNODE layer needs batch size >= 2 in training")
        c = sigma_alpha(self.gamma * self.vbn(self.scores(x)), self.alpha)
        return c.reshape(-1, self.n_trees, self.depth)

    def choice(self, x: torch.Tensor) -> torch.Tensor:
        return leaf_weights(self.gates(x))                   # (batch, n_trees, 2**depth)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return (self.choice(x) * self.response).sum(-1)
