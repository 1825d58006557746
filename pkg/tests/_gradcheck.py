"""Central-difference gradient oracle used by the neural tests."""
import torch


def max_relative_grad_error(fn, tensors, h=1e-6, seed=0, max_entries=400):
    """Compare autograd against central differences for a random projection of ``fn()``.

    ``tensors`` are leaf tensors (inputs or parameters) that ``fn`` reads.
    Returns ||analytic - numeric|| / max(||numeric||, 1e-12) over sampled
    entries of every tensor.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        out = fn()
    w = torch.randn(out.shape, generator=gen, dtype=out.dtype)
    for t in tensors:
        t.grad = None
    (fn() * w).sum().backward()
    analytic, numeric = [], []
    for t in tensors:
        flat = t.data.view(-1)
        grad = t.grad.reshape(-1) if t.grad is not None else torch.zeros_like(flat)
        n = flat.numel()
        idx = torch.randperm(n, generator=gen)[:max_entries] if n > max_entries else torch.arange(n)
        for i in idx.tolist():
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + h
                up = (fn() * w).sum().item()
                flat[i] = orig - h
                down = (fn() * w).sum().item()
                flat[i] = orig
            numeric.append((up - down) / (2 * h))
            analytic.append(grad[i].item())
    a = torch.tensor(analytic, dtype=torch.float64)
    nm = torch.tensor(numeric, dtype=torch.float64)
    return float((a - nm).norm() / max(nm.norm().item(), 1e-12))


def module_grad_error(module, *inputs, **kw):
    leaves = [x for x in inputs if isinstance(x, torch.Tensor) and x.requires_grad]
    return max_relative_grad_error(lambda: module(*inputs), leaves + list(module.parameters()), **kw)
