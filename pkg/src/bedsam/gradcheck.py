"""Central finite-difference gradient checking."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import torch

__all__ = ["check_gradients", "numerical_grad", "relative_error"]


def numerical_grad(f: Callable[[], torch.Tensor], tensors: Sequence[torch.Tensor],
                   h: float = 1e-4) -> list[torch.Tensor]:
    """d f / d t for every element of every tensor, by central differences.

    ``f`` takes no arguments and reads the tensors, which are perturbed in
    place and restored afterwards.
    """
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                fp = float(f())
                flat[i] = orig - h
                fm = float(f())
                flat[i] = orig
                gflat[i] = (fp - fm) / (2 * h)
            grads.append(g)
    return grads


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    """||a - b|| / max(||a||, ||b||); 0 when both vanish."""
    scale = max(float(a.norm()), float(b.norm()))
    if scale == 0:
        return 0.0
    return float((a - b).norm()) / scale


def check_gradients(f: Callable[[], torch.Tensor], tensors: Sequence[torch.Tensor],
                    h: float = 1e-4) -> float:
    """Largest relative error between autograd and finite differences."""
    for t in tensors:
        t.grad = None
    f().backward()
    analytic = [t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
                for t in tensors]
    numeric = numerical_grad(f, tensors, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
