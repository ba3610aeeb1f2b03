"""Seeded synthetic scenes: textured background, disk/rectangle foreground,
a consistent depth map (foreground nearer) and a binary mask.

Files written per sample ``i`` (zero-padded to four digits)::

    0007_rgb.ppm    RGB image
    0007_depth.pgm  normalized depth, 0 = near, 1 = far
    0007_gt.pgm     mask, 0 or 255
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .dataio import Image, read_image, write_image

__all__ = ["Sample", "load_samples", "make_sample", "sample_paths", "write_dataset"]


@dataclass
class Sample:
    rgb: np.ndarray    # (H, W, 3) float32
    depth: np.ndarray  # (H, W) float32
    mask: np.ndarray   # (H, W) bool


def _quantize(x: np.ndarray) -> np.ndarray:
    # store exactly what a round trip through 8-bit files would give back
    levels = np.floor(np.clip(x, 0, 1) * 255 + 0.5).astype(np.float32)
    return levels / np.float32(255)


def make_sample(seed: int, index: int, size: int = 64) -> Sample:
    rng = np.random.Generator(np.random.Philox(key=[seed, index]))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)

    # muted background: linear color ramp plus blocky noise texture
    c0, c1 = rng.uniform(0.1, 0.5, 3), rng.uniform(0.1, 0.5, 3)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
    rgb = c0 + (c1 - c0) * ramp[..., None]
    block = max(size // 16, 1)
    coarse = rng.normal(0, 0.06, (size // block + 1, size // block + 1, 3))
    rgb += np.kron(coarse, np.ones((block, block, 1)))[:size, :size]
    rgb += rng.normal(0, 0.03, (size, size, 3))

    depth = 0.7 + 0.25 * (ramp if rng.random() < 0.5 else 1 - ramp)
    mask = np.zeros((size, size), dtype=bool)

    n_shapes = int(rng.integers(1, 3))
    for _ in range(n_shapes):
        color = rng.uniform(0.55, 0.95, 3)
        near = rng.uniform(0.1, 0.35)
        cy, cx = rng.uniform(0.25, 0.75, 2) * size
        if rng.random() < 0.5:
            r = rng.uniform(0.12, 0.25) * size
            shape = (yy * (size - 1) - cy) ** 2 + (xx * (size - 1) - cx) ** 2 <= r * r
        else:
            hh, hw = rng.uniform(0.1, 0.22, 2) * size
            shape = (np.abs(yy * (size - 1) - cy) <= hh) & (np.abs(xx * (size - 1) - cx) <= hw)
        rgb[shape] = color + rng.normal(0, 0.04, (int(shape.sum()), 3))
        depth[shape] = near
        mask |= shape

    return Sample(rgb=_quantize(rgb), depth=_quantize(depth), mask=mask)


def sample_paths(directory, index: int) -> tuple[str, str, str]:
    stem = os.path.join(directory, f"{index:04d}")
    return stem + "_rgb.ppm", stem + "_depth.pgm", stem + "_gt.pgm"


def write_dataset(directory, n: int, size: int = 64, seed: int = 0) -> list[str]:
    os.makedirs(directory, exist_ok=True)
    written = []
    for i in range(n):
        s = make_sample(seed, i, size)
        rgb_p, depth_p, gt_p = sample_paths(directory, i)
        write_image(Image(s.rgb), rgb_p)
        write_image(Image(s.depth), depth_p)
        write_image(Image(s.mask.astype(np.float32)), gt_p)
        written += [rgb_p, depth_p, gt_p]
    return written


def load_samples(directory) -> list[Sample]:
    stems = sorted(f[:-len("_gt.pgm")] for f in os.listdir(directory) if f.endswith("_gt.pgm"))
    out = []
    for stem in stems:
        base = os.path.join(directory, stem)
        rgb = read_image(base + "_rgb.ppm").data
        depth = read_image(base + "_depth.pgm").data
        mask = read_image(base + "_gt.pgm").data >= np.float32(128) / np.float32(255)
        out.append(Sample(rgb=np.array(rgb), depth=np.array(depth), mask=mask))
    return out
