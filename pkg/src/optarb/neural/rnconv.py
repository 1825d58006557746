"""Graph convolution built from RNODE layers, and the stacked network."""
from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .rnode import RNodeLayer


def neighbour_mean(z: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
    """Mean of z over in-neighbours (sources of edges into each node); zero when there are none.

    ``edges`` is (E, 2) of (src, dst).
    """
    out = torch.zeros_like(z)
    if edges.numel() == 0:
        return out
    src, dst = edges[:, 0], edges[:, 1]
    out = out.index_add(0, dst, z[src])
    deg = torch.zeros(z.shape[0], dtype=z.dtype, device=z.device).index_add(
        0, dst, torch.ones_like(dst, dtype=z.dtype))
    return out / deg.clamp_min(1).unsqueeze(-1)


class RNConvLayer(nn.Module):
    def __init__(self, in_features: int, n_trees: int, depth: int, q1: float = 0.5, **rnode_kw):
        super().__init__()
        self.q1 = q1
        self.first = RNodeLayer(in_features, n_trees, depth, **rnode_kw)
        self.second = RNodeLayer(in_features + n_trees, n_trees, depth, **rnode_kw)

    def forward(self, x: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
        z1 = F.dropout(self.first(x), self.q1, self.training)
        h1 = neighbour_mean(z1, edges)
        h2 = F.dropout(self.second(torch.cat([x, h1], dim=-1)), self.q1, self.training)
        return (h1 + h2) / 2


class RNConv(nn.Module):
    """Layer 1 sees the dropped-out input; layer l > 1 also sees the mean of earlier layer outputs.

    The prediction is the average over layers and trees.
    """

    def __init__(self, in_features: int, n_layers: int, n_trees: int, depth: int = 3,
                 q1: float = 0.5, q2: float = 0.2, **rnode_kw):
        super().__init__()
        if n_layers < 1:
            raise ValueError("need at least one layer")
        self.in_features, self.n_trees, self.q2 = in_features, n_trees, q2
        self.layers = nn.ModuleList(
            RNConvLayer(in_features + (n_trees if l else 0), n_trees, depth, q1, **rnode_kw)
            for l in range(n_layers))

    def forward(self, x: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
        x = F.dropout(x, self.q2, self.training)
        outputs = []
        for l, layer in enumerate(self.layers):
            e = x if l == 0 else torch.cat([x, torch.stack(outputs).mean(0)], dim=-1)
            outputs.append(layer(e, edges))
        return torch.stack(outputs).sum(0).sum(-1) / (self.n_trees * len(self.layers))
