"""Exact alpha-entmax along the last dimension.

alpha = 1.5 uses the closed-form sorted threshold; any other alpha > 1 finds
the threshold by bisection in float64.  Both share the analytic backward pass
``J = diag(s) - s s^T / sum(s)`` with ``s = p ** (2 - alpha)`` on the support.
"""
from __future__ import annotations

import torch


def _backward(p: torch.Tensor, grad: torch.Tensor, alpha: float) -> torch.Tensor:
    s = torch.where(p > 0, p.pow(2.0 - alpha), torch.zeros_like(p))
    gs = grad * s
    q = gs.sum(-1, keepdim=True) / s.sum(-1, keepdim=True)
    return gs - q * s


def _entmax15_threshold(z: torch.Tensor) -> torch.Tensor:
    """Threshold tau for p = [z/2 - tau]_+^2; ``z`` already shifted so max is 0."""
    zs, _ = torch.sort(z / 2, dim=-1, descending=True)
    n = z.shape[-1]
    k = torch.arange(1, n + 1, dtype=z.dtype, device=z.device)
    mean = zs.cumsum(-1) / k
    mean_sq = (zs * zs).cumsum(-1) / k
    ss = k * (mean_sq - mean * mean)
    delta = torch.clamp((1 - ss) / k, min=0)
    tau = mean - torch.sqrt(delta)
    support = (tau <= zs).sum(-1, keepdim=True)
    return tau.gather(-1, support - 1)


class _Entmax15(torch.autograd.Function):
    @staticmethod
    def forward(ctx, z):
        z = z - z.max(-1, keepdim=True).values
        tau = _entmax15_threshold(z)
        p = torch.clamp(z / 2 - tau, min=0) ** 2
        p = p / p.sum(-1, keepdim=True)
        ctx.save_for_backward(p)
        return p

    @staticmethod
    def backward(ctx, grad):
        (p,) = ctx.saved_tensors
        return _backward(p, grad, 1.5)


class _EntmaxBisect(torch.autograd.Function):
    @staticmethod
    def forward(ctx, z, alpha: float, n_iter: int):
        am1 = alpha - 1.0
        dtype = z.dtype
        x = (z.double() - z.double().max(-1, keepdim=True).values) * am1
        n = x.shape[-1]
        # p_i = [x_i - tau]_+^(1/am1); the root lies in [-1, -(1/n)^am1]
        lo = torch.full_like(x[..., :1], -1.0)
        hi = torch.full_like(x[..., :1], -(1.0 / n) ** am1)

        def mass(tau):
            base = torch.clamp(x - tau, min=0)
            # log-space power keeps alpha close to 1 from under/overflowing
            return torch.where(base > 0, torch.exp(torch.log(base.clamp_min(1e-300)) / am1),
                               torch.zeros_like(base))

        for _ in range(n_iter):
            mid = (lo + hi) / 2
            too_big = mass(mid).sum(-1, keepdim=True) >= 1
            lo = torch.where(too_big, mid, lo)
            hi = torch.where(too_big, hi, mid)
        p = mass((lo + hi) / 2)
        p = (p / p.sum(-1, keepdim=True)).to(dtype)
        ctx.alpha = alpha
        ctx.save_for_backward(p)
        return p

    @staticmethod
    def backward(ctx, grad):
        (p,) = ctx.saved_tensors
        return _backward(p, grad, ctx.alpha), None, None


def entmax_alpha(z: torch.Tensor, alpha: float = 1.5, n_iter: int = 100) -> torch.Tensor:
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    if alpha == 1.5:
        return _Entmax15.apply(z)
    return _EntmaxBisect.apply(z, float(alpha), n_iter)


def sigma_alpha(x: torch.Tensor, alpha: float = 1.5) -> torch.Tensor:
    """Two-class entmax: first coordinate of entmax([x, 0])."""
    pair = torch.stack([x, torch.zeros_like(x)], dim=-1)
    return entmax_alpha(pair, alpha)[..., 0]
