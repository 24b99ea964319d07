"""Shared test utilities: finite differences and tiny hand-set models."""

import torch

from fairdg.nets import DTYPE


def flat_grad(loss_fn, params):
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return torch.cat([(g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)])


def central_difference(loss_fn, params, step=1e-5):
    out = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + step
                up = float(loss_fn())
                flat[i] = old - step
                down = float(loss_fn())
                flat[i] = old
                out.append((up - down) / (2 * step))
    return torch.tensor(out, dtype=DTYPE)


def relative_error(loss_fn, params, step=1e-5):
    """``|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|)`` over all parameters."""
    a = flat_grad(loss_fn, params)
    n = central_difference(loss_fn, params, step)
    scale = max(a.norm().item(), n.norm().item(), 1e-12)
    return (a - n).norm().item() / scale


def set_linear(seq, weight, bias):
    lin = seq[0]
    with torch.no_grad():
        lin.weight.copy_(torch.tensor(weight, dtype=DTYPE))
        lin.bias.copy_(torch.tensor(bias, dtype=DTYPE))


def matvec(w, b, v):
    return [sum(wi * vi for wi, vi in zip(row, v)) + bi for row, bi in zip(w, b)]


def l1(u, v):
    return sum(abs(a - b) for a, b in zip(u, v))
