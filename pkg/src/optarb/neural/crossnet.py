"""Low-rank cross network, plain and batch-normalised."""
from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F


def cross_rank(p: int) -> int:
    return max(1, int(p / 4 + 0.5))


class CrossNet(nn.Module):
    """``x_{l+1} = x (.) (U phi(C phi(V^T z_l)) + b) + z_l``.

    In the plain variant ``z_l = x_l`` and the output is ``x_L``.  In the
    normalised variant ``z_0 = BN(x)``, ``z_l = BN(x_l)`` and the output is
    ``z_L``; the elementwise factor always uses the raw input ``x``.
    """

    def __init__(self, p: int, n_layers: int = 2, rank: int | None = None, batch_norm: bool = True,
                 negative_slope: float = 0.01):
        super().__init__()
        r = rank or cross_rank(p)
        self.batch_norm = batch_norm
        self.slope = negative_slope
        self.V = nn.ParameterList(nn.Parameter(torch.randn(p, r) / p**0.5) for _ in range(n_layers))
        self.C = nn.ParameterList(nn.Parameter(torch.randn(r, r) / r**0.5) for _ in range(n_layers))
        self.U = nn.ParameterList(nn.Parameter(torch.randn(p, r) / r**0.5) for _ in range(n_layers))
        self.b = nn.ParameterList(nn.Parameter(torch.zeros(p)) for _ in range(n_layers))
        if batch_norm:
            self.norms = nn.ModuleList(nn.BatchNorm1d(p) for _ in range(n_layers + 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.batch_norm and self.training and x.shape[0] < 2:
            raise ValueError("batch-normalised cross network needs batch size >= 2 in training")
        z = self.norms[0](x) if self.batch_norm else x
        for l in range(len(self.V)):
            inner = F.leaky_relu(z @ self.V[l], self.slope)
            inner = F.leaky_relu(inner @ self.C[l].T, self.slope)
            nxt = x * (inner @ self.U[l].T + self.b[l]) + z
            z = self.norms[l + 1](nxt) if self.batch_norm else nxt
        return z
