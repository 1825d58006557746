"""GCN and GraphSAGE baselines: stacked convolutions with leaky-ReLU and a linear head."""
from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .rnconv import neighbour_mean


class GCNConv(nn.Module):
    """Symmetric-normalised propagation with self loops, degrees counted at the destination."""

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.lin = nn.Linear(in_features, out_features, bias=False)
        self.bias = nn.Parameter(torch.zeros(out_features))

    def forward(self, x: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        loops = torch.arange(n, device=x.device).unsqueeze(1).repeat(1, 2)
        e = torch.cat([edges.reshape(-1, 2), loops], dim=0)
        src, dst = e[:, 0], e[:, 1]
        deg = torch.zeros(n, dtype=x.dtype, device=x.device).index_add(0, dst, torch.ones_like(dst, dtype=x.dtype))
        inv_sqrt = deg.pow(-0.5)
        w = (inv_sqrt[src] * inv_sqrt[dst]).unsqueeze(-1)
        h = self.lin(x)
        return torch.zeros_like(h).index_add(0, dst, w * h[src]) + self.bias


class SAGEConv(nn.Module):
    """W_neigh * mean(neighbours) + W_self * x + b."""

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.lin_neigh = nn.Linear(in_features, out_features)
        self.lin_self = nn.Linear(in_features, out_features, bias=False)

    def forward(self, x: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
        return self.lin_neigh(neighbour_mean(x, edges)) + self.lin_self(x)


CONVS = {"GCN": GCNConv, "SAGE": SAGEConv}


class BenchmarkGNN(nn.Module):
    def __init__(self, in_features: int, hidden: int, n_layers: int, conv: str = "GCN",
                 negative_slope: float = 0.01):
        super().__init__()
        if conv not in CONVS:
            raise ValueError(f"unknown convolution {conv!r}")
        self.slope = negative_slope
        widths = [in_features] + [hidden] * n_layers
        self.convs = nn.ModuleList(CONVS[conv](a, b) for a, b in zip(widths[:-1], widths[1:]))
        self.head = nn.Linear(hidden, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
        z = x
        for conv in self.convs:
            z = F.leaky_relu(conv(z, edges), self.slope)
        return self.head(z).squeeze(-1)
