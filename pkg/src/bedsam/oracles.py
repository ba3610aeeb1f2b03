"""Literal, loop-based transcriptions of the SOD metrics.

These are deliberately slow and share no code with :mod:`bedsam.metrics`:
every pixel is visited in plain Python, one threshold at a time. They
exist to cross-check the vectorized implementations on small masks.
Inputs are nested lists (rows of floats / 0-1 ints).
"""

from __future__ import annotations

import math
import sys
from fractions import Fraction

EPS = sys.float_info.epsilon


def _flat(rows):
    return [v for row in rows for v in row]


def binarize(p, t):
    return [[1 if v >= t else 0 for v in row] for row in p]


def f_max(p, g, beta_sq=0.3):
    n_fg = sum(_flat(g))
    if n_fg == 0:
        return 0.0
    best = 0.0
    for k in range(256):
        t = k / 255
        tp = fp = 0
        for prow, grow in zip(p, g):
            for pv, gv in zip(prow, grow):
                if pv >= t:
                    if gv:
                        tp += 1
                    else:
                        fp += 1
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / n_fg
        den = beta_sq * precision + recall
        f = (1 + beta_sq) * precision * recall / den if den > 0 else 0.0
        best = max(best, f)
    return best


def e_measure_single(b, g):
    h, w = len(g), len(g[0])
    n = h * w
    g_sum = sum(_flat(g))
    if g_sum == 0:
        return sum(1 - v for v in _flat(b)) / n
    if g_sum == n:
        return sum(_flat(b)) / n
    mb = sum(_flat(b)) / n
    mg = g_sum / n
    total = 0.0
    for y in range(h):
        for x in range(w):
            fb = b[y][x] - mb
            fg = g[y][x] - mg
            align = 2 * fb * fg / (fb * fb + fg * fg + EPS)
            total += (align + 1) ** 2 / 4
    return total / n


def e_measure_mean(p, g):
    # Many thresholds repeat the same binary map; evaluate each map once.
    seen = {}
    total = 0.0
    for k in range(256):
        b = binarize(p, k / 255)
        key = tuple(_flat(b))
        if key not in seen:
            seen[key] = e_measure_single(b, g)
        total += seen[key]
    return total / 256


def _mean(vals):
    return sum(vals) / len(vals)


def _std_unbiased(vals):
    if len(vals) < 2:
        return 0.0
    m = _mean(vals)
    return math.sqrt(sum((v - m) ** 2 for v in vals) / (len(vals) - 1))


def _object(vals):
    x = _mean(vals)
    return 2.0 * x / (x * x + 1.0 + _std_unbiased(vals) + EPS)


def _ssim(p_vals, g_vals):
    n = len(p_vals)
    x = _mean(p_vals)
    y = _mean(g_vals)
    sx = sum((a - x) ** 2 for a in p_vals) / (n - 1 + EPS)
    sy = sum((b - y) ** 2 for b in g_vals) / (n - 1 + EPS)
    sxy = sum((a - x) * (b - y) for a, b in zip(p_vals, g_vals)) / (n - 1 + EPS)
    num = 4 * x * y * sxy
    den = (x * x + y * y) * (sx + sy)
    if num != 0:
        return num / (den + EPS)
    return 1.0 if den == 0 else 0.0


def s_measure(p, g, alpha=0.5):
    h, w = len(g), len(g[0])
    n = h * w
    g_sum = sum(_flat(g))
    mp = sum(_flat(p)) / n
    if g_sum == 0:
        return 1.0 - mp
    if g_sum == n:
        return mp

    fg_vals = [p[y][x] for y in range(h) for x in range(w) if g[y][x]]
    bg_vals = [1.0 - p[y][x] for y in range(h) for x in range(w) if not g[y][x]]
    u = g_sum / n
    s_o = u * _object(fg_vals) + (1 - u) * _object(bg_vals)

    # centroid measured from the top-left image corner, pixel i spanning [i, i+1)
    cx = Fraction(sum((2 * x + 1) * g[y][x] for y in range(h) for x in range(w)), 2 * g_sum)
    cy = Fraction(sum((2 * y + 1) * g[y][x] for y in range(h) for x in range(w)), 2 * g_sum)
    region_scores = []
    for sy in _nearest_edges(cy):
        for sx in _nearest_edges(cx):
            s_r = 0.0
            quadrants = [
                (range(0, sy), range(0, sx)),
                (range(0, sy), range(sx, w)),
                (range(sy, h), range(0, sx)),
                (range(sy, h), range(sx, w)),
            ]
            for rows, cols in quadrants:
                pv = [p[y][x] for y in rows for x in cols]
                gv = [g[y][x] for y in rows for x in cols]
                if not pv:
                    continue
                s_r += len(pv) / n * _ssim(pv, gv)
            region_scores.append(s_r)
    s_r = sum(region_scores) / len(region_scores)

    return max(alpha * s_o + (1 - alpha) * s_r, 0.0)


def _nearest_edges(c):
    """Integer split position(s) closest to c; both neighbours on an exact tie."""
    lo = math.floor(c)
    if c - lo == Fraction(1, 2):
        return [lo, lo + 1]
    return [lo] if c - lo < Fraction(1, 2) else [lo + 1]


def mae(p, g):
    vals = [abs(a - b) for a, b in zip(_flat(p), _flat(g))]
    return sum(vals) / len(vals)


def f_weighted(p, g, beta_sq=1.0):
    """Straight-line weighted F-measure with brute-force distances."""
    h, w = len(g), len(g[0])
    fg = [(y, x) for y in range(h) for x in range(w) if g[y][x]]
    if not fg:
        raise ValueError("empty ground truth")
    err = [[abs(p[y][x] - g[y][x]) for x in range(w)] for y in range(h)]

    dist = [[0.0] * w for _ in range(h)]
    err_t = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            if g[y][x]:
                err_t[y][x] = err[y][x]
                continue
            best = min(fg, key=lambda q: (q[0] - y) ** 2 + (q[1] - x) ** 2)
            dist[y][x] = math.hypot(best[0] - y, best[1] - x)
            err_t[y][x] = err[best[0]][best[1]]

    sigma = 5.0
    kern = [[math.exp(-((i - 3) ** 2 + (j - 3) ** 2) / (2 * sigma * sigma)) for j in range(7)]
            for i in range(7)]
    ksum = sum(_flat(kern))
    ew_fg = []
    ew_bg = []
    for y in range(h):
        for x in range(w):
            if g[y][x]:
                acc = 0.0
                for i in range(7):
                    for j in range(7):
                        yy, xx = y + i - 3, x + j - 3
                        if 0 <= yy < h and 0 <= xx < w:
                            acc += kern[i][j] / ksum * err_t[yy][xx]
                ew_fg.append(min(acc, err[y][x]))
            else:
                weight = 2.0 - math.exp(math.log(0.5) / 5.0 * dist[y][x])
                ew_bg.append(err[y][x] * weight)
    tp_w = len(fg) - sum(ew_fg)
    fp_w = sum(ew_bg)
    recall = 1.0 - sum(ew_fg) / len(ew_fg)
    precision = tp_w / (tp_w + fp_w + EPS)
    return (1 + beta_sq) * recall * precision / (recall + beta_sq * precision + EPS)
