"""Salient-object-detection metrics: MAE, S-measure, max/weighted F-measure,
mean E-measure, plus a directory evaluator.

Conventions follow the widely used reference evaluators:

* predictions are binarized as ``p >= k/255`` for k = 0..255;
* an all-background GT gives S = 1 - mean(p) and E = 1 - mean(binarized p);
  an all-foreground GT gives S = mean(p) and E = mean(binarized p);
* variances use the unbiased (N - 1) normalizer with an ``eps`` guard.

Two choices make every metric exactly invariant to flipping p and g together.
The S-measure regions are split at the pixel edge nearest the GT centroid,
averaging both edges on a tie. The weighted F-measure averages its
nearest-foreground lookup over the four flips, which only matters when
several foreground pixels are equally close.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .dataio import read_image

__all__ = [
    "EPS",
    "METRIC_NAMES",
    "THRESHOLDS",
    "MetricReport",
    "e_measure_curve",
    "e_measure_mean",
    "evaluate_directory",
    "evaluate_pair",
    "f_beta",
    "f_max",
    "f_weighted",
    "mae",
    "s_measure",
]

log = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps
THRESHOLDS = np.arange(256, dtype=np.float64) / 255
METRIC_NAMES = ("s_measure", "f_max", "f_weighted", "e_mean", "mae")


def _pair(p, g) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g)
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    if g.dtype != bool:
        if not np.all((g == 0) | (g == 1)):
            raise ValueError("ground truth must be binary")
        g = g.astype(bool)
    return p, g


def mae(p, g) -> float:
    p, g = _pair(p, g)
    return float(np.mean(np.abs(p - g)))


def f_beta(precision, recall, beta_sq: float = 0.3):
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    num = (1 + beta_sq) * precision * recall
    den = beta_sq * precision + recall
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1), 0.0)
    return float(out) if out.ndim == 0 else out


def _counts_at_or_above(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    srt = np.sort(values)
    return srt.size - np.searchsorted(srt, thresholds, side="left")


def f_max(p, g, beta_sq: float = 0.3) -> float:
    """Maximum F-beta over the 256-level threshold sweep.

    An empty ground truth has no defined recall; 0.0 is returned.
    """
    p, g = _pair(p, g)
    n_fg = int(g.sum())
    if n_fg == 0:
        return 0.0
    tp = _counts_at_or_above(p[g], THRESHOLDS).astype(np.float64)
    fp = _counts_at_or_above(p[~g], THRESHOLDS).astype(np.float64)
    predicted = tp + fp
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = tp / n_fg
    return float(np.max(f_beta(precision, recall, beta_sq)))


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = (size - 1) / 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    k = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    return k / k.sum()


def _nearest_foreground_error(err: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Error of the nearest foreground pixel, for every pixel.

    Equidistant foreground pixels are resolved in scan order by the distance
    transform; averaging over the four flips makes the result independent of
    that order, and leaves it unchanged wherever the nearest pixel is unique.
    """
    acc = np.zeros_like(err)
    for flip in ((), (1,), (0,), (0, 1)):
        e = np.flip(err, flip) if flip else err
        m = np.flip(g, flip) if flip else g
        _, (iy, ix) = ndimage.distance_transform_edt(~m, return_indices=True)
        t = e[iy, ix]
        acc += np.flip(t, flip) if flip else t
    return acc / 4


def f_weighted(p, g, beta_sq: float = 1.0) -> float:
    """Weighted F-measure.

    Errors inside the object are smoothed with a 7x7, sigma=5 Gaussian over
    the error field (background pixels borrow the error of their nearest
    foreground pixel), and false positives are penalized more the farther
    they lie from the object.
    """
    p, g = _pair(p, g)
    if not g.any():
        raise ValueError("weighted F-measure is undefined for an empty ground truth")
    err = np.abs(p - g)
    dist = ndimage.distance_transform_edt(~g)
    err_t = _nearest_foreground_error(err, g)
    err_a = ndimage.convolve(err_t, _gaussian_kernel(), mode="constant", cval=0.0)
    min_e = np.where(g & (err_a < err), err_a, err)
    b = np.where(g, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    ew = min_e * b
    tp_w = g.sum() - ew[g].sum()
    fp_w = ew[~g].sum()
    recall = 1.0 - ew[g].mean()
    precision = tp_w / (tp_w + fp_w + EPS)
    return float((1 + beta_sq) * recall * precision / (recall + beta_sq * precision + EPS))


def _split_candidates(index_sum: int, count: int) -> tuple[int, ...]:
    """Pixel edges nearest to the centroid along one axis.

    The centroid in edge coordinates is ``index_sum / count + 1/2``. When it
    sits exactly between two edges both are returned, which keeps the region
    term symmetric under flips.
    """
    den = 2 * count
    q, r = divmod(2 * index_sum + count, den)
    if 2 * r == den:
        return q, q + 1
    return (q,) if 2 * r < den else (q + 1,)


def _centroid_splits(g: np.ndarray) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Candidate (x, y) split positions: number of columns/rows left of/above the split."""
    rows, cols = np.nonzero(g)
    n = rows.size
    return _split_candidates(int(cols.sum()), n), _split_candidates(int(rows.sum()), n)


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    p, g = p.ravel(), g.ravel()
    n = p.size
    x = p.sum() / n
    y = g.sum() / n
    dp, dg = p - x, g - y
    norm = n - 1 + EPS
    sx = dp.dot(dp) / norm
    sy = dg.dot(dg) / norm
    sxy = dp.dot(dg) / norm
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    if beta == 0:
        return 1.0
    return 0.0


def _object_score(values: np.ndarray) -> float:
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def _s_object(p: np.ndarray, g: np.ndarray) -> float:
    u = g.mean()
    fg = _object_score(p[g])
    bg = _object_score(1.0 - p[~g])
    return u * fg + (1 - u) * bg


def _s_region_at(p: np.ndarray, gf: np.ndarray, x: int, y: int) -> float:
    h, w = gf.shape
    score = 0.0
    for rs, cs in ((slice(0, y), slice(0, x)), (slice(0, y), slice(x, w)),
                   (slice(y, h), slice(0, x)), (slice(y, h), slice(x, w))):
        block = p[rs, cs]
        if block.size == 0:
            continue
        score += block.size / (h * w) * _ssim(block, gf[rs, cs])
    return score


def _s_region(p: np.ndarray, g: np.ndarray) -> float:
    xs, ys = _centroid_splits(g)
    gf = g.astype(np.float64)
    scores = [_s_region_at(p, gf, x, y) for y in ys for x in xs]
    return sum(scores) / len(scores)


def s_measure(p, g, alpha: float = 0.5) -> float:
    p, g = _pair(p, g)
    y = g.mean()
    if y == 0:
        return float(1.0 - p.mean())
    if y == 1:
        return float(p.mean())
    score = alpha * _s_object(p, g) + (1 - alpha) * _s_region(p, g)
    return float(max(score, 0.0))


def e_measure_curve(p, g) -> np.ndarray:
    """E-measure at each of the 256 thresholds."""
    p, g = _pair(p, g)
    n = p.size
    n_fg = int(g.sum())
    pos = _counts_at_or_above(p.ravel(), THRESHOLDS).astype(np.float64)
    if n_fg == 0:
        return 1.0 - pos / n
    if n_fg == n:
        return pos / n
    tp = _counts_at_or_above(p[g], THRESHOLDS).astype(np.float64)
    fp = pos - tp
    fn = n_fg - tp
    tn = (n - n_fg) - fp
    mean_b = pos / n
    mean_g = n_fg / n
    total = np.zeros_like(pos)
    for count, b_val, g_val in ((tp, 1.0, 1.0), (fp, 1.0, 0.0), (fn, 0.0, 1.0), (tn, 0.0, 0.0)):
        phi_b = b_val - mean_b
        phi_g = g_val - mean_g
        xi = 2 * phi_b * phi_g / (phi_b * phi_b + phi_g * phi_g + EPS)
        total += count * (xi + 1) ** 2 / 4
    return total / n


def e_measure_mean(p, g) -> float:
    return float(e_measure_curve(p, g).mean())


def evaluate_pair(p, g) -> dict[str, float]:
    p, g = _pair(p, g)
    return {
        "s_measure": s_measure(p, g),
        "f_max": f_max(p, g),
        "f_weighted": f_weighted(p, g) if g.any() else 0.0,
        "e_mean": e_measure_mean(p, g),
        "mae": mae(p, g),
    }


@dataclass
class MetricReport:
    per_image: list[tuple[str, dict[str, float]]] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    @property
    def means(self) -> dict[str, float]:
        if not self.per_image:
            return {k: float("nan") for k in METRIC_NAMES}
        return {k: float(np.mean([m[k] for _, m in self.per_image])) for k in METRIC_NAMES}

    @property
    def ok(self) -> bool:
        return not self.missing

    def to_text(self) -> str:
        lines = []
        for name, m in self.per_image:
            lines.append(name + " " + " ".join(f"{k}={m[k]:.6f}" for k in METRIC_NAMES))
        for name in self.missing:
            lines.append(f"{name} missing")
        means = self.means
        lines.append(f"mean(n={len(self.per_image)}) "
                     + " ".join(f"{k}={means[k]:.6f}" for k in METRIC_NAMES))
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        """One ``key=value`` record per line; full float precision."""
        lines = []
        for name, m in self.per_image:
            lines.append(f"record=image name={name} "
                         + " ".join(f"{k}={m[k]!r}" for k in METRIC_NAMES))
        for name in self.missing:
            lines.append(f"record=missing name={name}")
        means = self.means
        lines.append(f"record=mean count={len(self.per_image)} missing={len(self.missing)} "
                     + " ".join(f"{k}={means[k]!r}" for k in METRIC_NAMES))
        return "\n".join(lines) + "\n"

    def format(self, fmt: str = "text") -> str:
        if fmt == "text":
            return self.to_text()
        if fmt == "kv":
            return self.to_kv()
        raise ValueError(f"unknown report format {fmt!r}")


def load_gt(path) -> np.ndarray:
    img = read_image(path)
    if img.channels != 1:
        raise ValueError(f"{path}: ground truth must be grayscale")
    # 128/255 cut on the stored integer level.
    return img.data >= np.float32(128) / np.float32(255)


def load_pred(path) -> np.ndarray:
    img = read_image(path)
    if img.channels != 1:
        raise ValueError(f"{path}: prediction must be grayscale")
    # recover the exact stored levels so scores do not inherit float32 rounding
    levels = np.floor(img.data.astype(np.float64) * img.maxval + 0.5)
    return levels / img.maxval


def _mask_names(d) -> set[str]:
    return {f for f in os.listdir(d) if f.lower().endswith(".pgm")}


def evaluate_directory(pred_dir, gt_dir) -> MetricReport:
    """Evaluate every same-named PGM pair; unmatched files are reported as missing."""
    preds = _mask_names(pred_dir)
    gts = _mask_names(gt_dir)
    report = MetricReport()
    for name in sorted(gts | preds):
        if name not in preds or name not in gts:
            side = "prediction" if name not in preds else "ground truth"
            log.warning("%s: no %s counterpart, skipped", name, side)
            report.missing.append(name)
            continue
        p = load_pred(os.path.join(pred_dir, name))
        g = load_gt(os.path.join(gt_dir, name))
        report.per_image.append((name, evaluate_pair(p, g)))
    return report
