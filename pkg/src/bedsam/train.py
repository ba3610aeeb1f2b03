"""Deterministic trainer: AdamW with decoupled weight decay and a cosine
learning-rate schedule, deep supervision over the three heads."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from .dataio import Checkpoint
from .loss import boundary_weights, structure_loss_fn
from .metrics import mae, s_measure
from .net import BEDSAM, NetConfig, predict, to_checkpoint
from .structmap import cumulative_structure_map
from .synth import Sample

__all__ = [
    "TrainResult",
    "TrainingDiverged",
    "build_input",
    "cosine_lr",
    "dataset_loss",
    "evaluate_model",
    "make_dataset",
    "train",
]

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def build_input(rgb: np.ndarray, depth: np.ndarray, cfg: NetConfig) -> np.ndarray:
    """[C, H, W] network input; the fourth channel follows ``cfg.depth_input``."""
    chans = [np.asarray(rgb, dtype=np.float32).transpose(2, 0, 1)]
    if cfg.depth_input == "raw_depth":
        chans.append(np.asarray(depth, dtype=np.float32)[None])
    elif cfg.depth_input == "edge_map":
        smap = cumulative_structure_map(np.asarray(depth, dtype=np.float32),
                                        cfg.components, cfg.epsilon)
        chans.append(smap[None])
    return np.ascontiguousarray(np.concatenate(chans, axis=0), dtype=np.float32)


def make_dataset(samples: list[Sample], cfg: NetConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(build_input(s.rgb, s.depth, cfg), s.mask.astype(np.float32)) for s in samples]


def cosine_lr(step: int, total: int, lr: float, lr_min: float = 0.0) -> float:
    if total <= 1:
        return lr
    return lr_min + 0.5 * (lr - lr_min) * (1 + math.cos(math.pi * step / (total - 1)))


@dataclass
class TrainResult:
    model: BEDSAM
    losses: list[float]

    @property
    def checkpoint(self) -> Checkpoint:
        return to_checkpoint(self.model)


def _batch_loss(model, x, g, window):
    logits = model(x)
    w = boundary_weights(g, window)
    return sum(structure_loss_fn(z[:, 0], g, weights=w) for z in logits)


def train(cfg: NetConfig, dataset, model: BEDSAM | None = None, steps: int | None = None,
          log_every: int = 0) -> TrainResult:
    """Train and return the model together with the per-step total loss."""
    if not dataset:
        raise ValueError("empty dataset")
    model = model if model is not None else BEDSAM(cfg)
    model.train()
    n = len(dataset)
    per_epoch = math.ceil(n / cfg.batch)
    total = steps if steps is not None else (cfg.steps or cfg.epochs * per_epoch)

    xs = torch.from_numpy(np.stack([x for x, _ in dataset]))
    gs = torch.from_numpy(np.stack([g for _, g in dataset]))
    params = model.trainable_parameters()
    opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.Generator(np.random.Philox(key=[cfg.seed, 1]))

    losses: list[float] = []
    order = np.empty(0, dtype=np.int64)
    for step in range(total):
        if step % per_epoch == 0:
            order = rng.permutation(n)
        idx = order[(step % per_epoch) * cfg.batch:(step % per_epoch + 1) * cfg.batch]
        x, g = xs[idx], gs[idx]
        if cfg.flips:
            flips = rng.random((len(idx), 2)) < 0.5
            x, g = x.clone(), g.clone()
            for j, (fh, fv) in enumerate(flips):
                dims = [d for d, f in ((-1, fh), (-2, fv)) if f]
                if dims:
                    x[j] = x[j].flip(dims)
                    g[j] = g[j].flip(dims)

        for group in opt.param_groups:
            group["lr"] = cosine_lr(step, total, cfg.lr, cfg.lr_min)
        opt.zero_grad(set_to_none=True)
        loss = _batch_loss(model, x, g, cfg.loss_window)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at step {step}")
        loss.backward()
        opt.step()
        losses.append(value)
        if log_every and (step % log_every == 0 or step == total - 1):
            log.info("step %d/%d loss %.5f", step + 1, total, value)
    model.eval()
    return TrainResult(model=model, losses=losses)


def evaluate_model(model: BEDSAM, dataset) -> dict[str, float]:
    """Mean S-measure and MAE of sigma(S1) over (input, mask) pairs."""
    s_vals, m_vals = [], []
    for x, g in dataset:
        p = predict(model, x)
        s_vals.append(s_measure(p, g.astype(bool)))
        m_vals.append(mae(p, g.astype(bool)))
    return {"s_measure": float(np.mean(s_vals)), "mae": float(np.mean(m_vals))}


def dataset_loss(model: BEDSAM, dataset, window: int = 31) -> float:
    """Mean total loss over the whole dataset, no augmentation."""
    xs = torch.from_numpy(np.stack([x for x, _ in dataset]))
    gs = torch.from_numpy(np.stack([g for _, g in dataset]))
    with torch.no_grad():
        return float(_batch_loss(model, xs, gs, window))
