"""Boundary-weighted structure loss (weighted BCE + weighted IoU) with a
hand-derived gradient, and its three-level deep-supervision sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

__all__ = [
    "LossValue",
    "StructureLoss",
    "boundary_weights",
    "structure_loss",
    "structure_loss_fn",
    "total_loss",
]


@dataclass
class LossValue:
    value: float
    grad: torch.Tensor | list[torch.Tensor]
    bce: float = 0.0
    iou: float = 0.0


def _as_tensor(x, dtype=None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def boundary_weights(g, window: int = 31) -> torch.Tensor:
    """``1 + 5 * |meanpool(g) - g|`` with replicate padding.

    Works on (..., H, W); leading dims are treated as a batch.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    g = _as_tensor(g)
    if not g.is_floating_point():
        g = g.to(torch.float64)
    shape = g.shape
    x = g.reshape(-1, 1, shape[-2], shape[-1])
    r = window // 2
    x = F.pad(x, (r, r, r, r), mode="replicate")
    pooled = F.avg_pool2d(x, kernel_size=window, stride=1)
    return 1 + 5 * (pooled.reshape(shape) - g).abs()


def _loss_and_grad(z: torch.Tensor, g: torch.Tensor, w: torch.Tensor):
    """Per-map loss and d(loss)/d(logits); reduces over the last two dims."""
    dims = (-2, -1)
    p = torch.sigmoid(z)
    # softplus(z) - g*z, the logit form of binary cross-entropy
    bce = z.clamp(min=0) - g * z + torch.log1p(torch.exp(-z.abs()))
    wsum = w.sum(dims, keepdim=True)
    wbce = (w * bce).sum(dims, keepdim=True) / wsum

    inter = (w * p * g).sum(dims, keepdim=True) + 1
    union = (w * (p + g - p * g)).sum(dims, keepdim=True) + 1
    wiou = 1 - inter / union

    grad_bce = w * (p - g) / wsum
    d_iou_dp = -w * (g * union - inter * (1 - g)) / (union * union)
    grad = grad_bce + d_iou_dp * p * (1 - p)
    return wbce.squeeze(-1).squeeze(-1), wiou.squeeze(-1).squeeze(-1), grad


class StructureLoss(torch.autograd.Function):
    """Batch-mean structure loss on logits (N, ..., H, W) with the analytic backward."""

    @staticmethod
    def forward(ctx, logits, g, w):
        wbce, wiou, grad = _loss_and_grad(logits, g, w)
        per_map = wbce + wiou
        n = per_map.numel()
        ctx.save_for_backward(grad / n)
        return per_map.mean()

    @staticmethod
    def backward(ctx, grad_out):
        (grad,) = ctx.saved_tensors
        return grad_out * grad, None, None


def structure_loss_fn(logits: torch.Tensor, g: torch.Tensor, window: int = 31,
                      weights: torch.Tensor | None = None) -> torch.Tensor:
    """Differentiable entry point used by the trainer."""
    g = g.to(logits.dtype)
    w = boundary_weights(g, window) if weights is None else weights
    return StructureLoss.apply(logits, g, w.to(logits.dtype))


def structure_loss(logits, g, window: int = 31) -> LossValue:
    z = _as_tensor(logits)
    if not z.is_floating_point():
        z = z.to(torch.float64)
    g = _as_tensor(g, dtype=z.dtype)
    if z.shape != g.shape:
        raise ValueError(f"logits {tuple(z.shape)} and mask {tuple(g.shape)} differ in shape")
    if not torch.isfinite(z).all():
        raise ValueError("logits contain non-finite values")
    w = boundary_weights(g, window)
    with torch.no_grad():
        wbce, wiou, grad = _loss_and_grad(z, g, w)
    return LossValue(value=float((wbce + wiou).sum()), grad=grad,
                     bce=float(wbce.sum()), iou=float(wiou.sum()))


def total_loss(logits_per_level, g, window: int = 31) -> LossValue:
    """Unweighted sum of the structure loss over exactly three supervised maps."""
    levels = list(logits_per_level)
    if len(levels) != 3:
        raise ValueError(f"expected 3 supervised levels, got {len(levels)}")
    parts = [structure_loss(z, g, window) for z in levels]
    return LossValue(value=sum(p.value for p in parts), grad=[p.grad for p in parts],
                     bce=sum(p.bce for p in parts), iou=sum(p.iou for p in parts))
