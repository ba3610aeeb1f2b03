"""Cumulative depth structure maps.

A depth map is turned into up to three representations (raw, reciprocal
"inverse", and mid-depth centered), each is passed through a 3x3 Sobel
operator scaled into [0, 1], and the soft edges are summed and clamped.
"""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np

from .dataio import Image

__all__ = [
    "COMPONENTS",
    "DEFAULT_EPSILON",
    "attach_channel",
    "center_depth",
    "cumulative_structure_map",
    "invert_depth",
    "normalize_minmax",
    "parse_components",
    "sobel_soft_edges",
]

COMPONENTS = ("depth", "inverse", "centered")
DEFAULT_EPSILON = 0.01
# Largest Sobel magnitude for inputs in [0, 1]: |Gx| = |Gy| = 4.
SOBEL_MAX = 4.0 * np.sqrt(2.0)


def _as_depth(d) -> np.ndarray:
    d = np.asarray(d)
    if d.ndim != 2:
        raise ValueError(f"depth map must be 2-D, got shape {d.shape}")
    if not np.issubdtype(d.dtype, np.floating):
        d = d.astype(np.float32)
    return d


def normalize_minmax(x: np.ndarray) -> np.ndarray:
    """Affine rescale to [0, 1]; a constant map becomes all zeros."""
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def center_depth(d) -> np.ndarray:
    d = _as_depth(d)
    return np.abs(d - 0.5) * 2


def invert_depth(d, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Min-max normalized reciprocal depth ``1 / (d + epsilon)``.

    The plain complement ``1 - d`` has the same Sobel magnitude as ``d``,
    so a nonlinear inverse is used to make the term informative.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    d = _as_depth(d)
    return normalize_minmax(1.0 / (d + d.dtype.type(epsilon)))


def sobel_soft_edges(d) -> np.ndarray:
    """Sobel gradient magnitude divided by 4*sqrt(2); zero on the border."""
    d = _as_depth(d)
    h, w = d.shape
    if h < 3 or w < 3:
        raise ValueError(f"Sobel needs at least 3x3 pixels, got {h}x{w}")
    tl, tc, tr = d[:-2, :-2], d[:-2, 1:-1], d[:-2, 2:]
    ml, mr = d[1:-1, :-2], d[1:-1, 2:]
    bl, bc, br = d[2:, :-2], d[2:, 1:-1], d[2:, 2:]
    gx = (tr - tl) + 2 * (mr - ml) + (br - bl)
    gy = (bl - tl) + 2 * (bc - tc) + (br - tr)
    out = np.zeros_like(d)
    out[1:-1, 1:-1] = np.sqrt(gx * gx + gy * gy) / d.dtype.type(SOBEL_MAX)
    return np.minimum(out, 1)


def parse_components(components: str | Iterable[str]) -> tuple[str, ...]:
    if isinstance(components, str):
        components = [c for c in components.replace("+", ",").split(",") if c.strip()]
    chosen = {c.strip() for c in components}
    unknown = chosen - set(COMPONENTS)
    if unknown:
        raise ValueError(f"unknown structure-map components: {sorted(unknown)}")
    if not chosen:
        raise ValueError("at least one structure-map component is required")
    return tuple(c for c in COMPONENTS if c in chosen)


def cumulative_structure_map(d, components=COMPONENTS,
                             epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    comps = parse_components(components)
    d = _as_depth(d)
    transforms = {
        "depth": lambda x: x,
        "inverse": lambda x: invert_depth(x, epsilon),
        "centered": center_depth,
    }
    total = np.zeros_like(d)
    for name in comps:
        total = total + sobel_soft_edges(transforms[name](d))
    return np.clip(total, 0, 1)


def attach_channel(img: Image | np.ndarray, smap: np.ndarray) -> np.ndarray:
    """Stack an RGB image (H, W, 3) and a structure map into a [4, H, W] array."""
    rgb = img.data if isinstance(img, Image) else np.asarray(img)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an RGB image, got shape {rgb.shape}")
    smap = np.asarray(smap)
    if smap.shape != rgb.shape[:2]:
        raise ValueError(f"structure map {smap.shape} does not match image {rgb.shape[:2]}")
    return np.concatenate([rgb.transpose(2, 0, 1), smap[None]], axis=0).astype(np.float32)
