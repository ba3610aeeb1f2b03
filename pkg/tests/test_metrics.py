import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bedsam import oracles
from bedsam.dataio import Image, write_image
from bedsam.metrics import (METRIC_NAMES, e_measure_curve, e_measure_mean, evaluate_directory,
                            evaluate_pair, f_beta, f_max, f_weighted, load_gt, mae, s_measure)

# 3x3 fixture; expected values from the loop oracles in bedsam.oracles
FIXTURE_PRED = [[0, 64, 220], [220, 220, 30], [10, 220, 220]]
FIXTURE_GT = [[0, 0, 255], [255, 255, 0], [0, 255, 255]]
FIXTURE_EXPECTED = {
    "s_measure": 0.9614586026729474,
    "f_max": 1.0,
    "f_weighted": 0.9417956653391054,
    "e_mean": 0.827881077226949,
    "mae": 0.12156862745098035,
}


def fixture_arrays():
    p = np.array(FIXTURE_PRED, dtype=np.float64) / 255
    g = np.array(FIXTURE_GT) >= 128
    return p, g


def all_binary_3x3():
    for bits in range(512):
        yield np.array([(bits >> i) & 1 for i in range(9)], dtype=np.float64).reshape(3, 3)


def random_gts(n=10, seed=7):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, 2, (3, 3)) for _ in range(n)]


masks16 = st.tuples(
    arrays(np.float64, (16, 16), elements=st.floats(0, 1, allow_nan=False)),
    arrays(np.bool_, (16, 16)),
)


def test_mae_examples():
    g = np.array([[0, 1]])
    assert mae(g.astype(float), g) == 0.0
    assert mae(np.array([[0.2, 0.4]]), g) == pytest.approx(0.4)
    assert mae(1.0 - g, g) == 1.0


def test_dimension_mismatch():
    for fn in (mae, f_max, f_weighted, s_measure, e_measure_mean):
        with pytest.raises(ValueError):
            fn(np.zeros((2, 2)), np.zeros((2, 3), dtype=int))


def test_f_beta_examples():
    assert f_beta(1.0, 1.0, 0.3) == 1.0
    assert f_beta(0.5, 1.0, 0.3) == pytest.approx(1.3 * 0.5 / (0.15 + 1.0))
    assert f_beta(0.5, 1.0, 0.3) == pytest.approx(0.56521739, abs=1e-8)
    assert f_beta(0.0, 0.7) == 0.0
    assert f_beta(0.7, 0.0) == 0.0
    assert f_beta(0.0, 0.0) == 0.0


def test_f_max_examples():
    g = np.array([[1, 1], [0, 0]])
    assert f_max(g.astype(float), g) == 1.0
    assert f_max(np.full((2, 2), 0.6), g) == pytest.approx(0.5652173913, abs=1e-9)
    assert f_max(np.zeros((2, 2)), np.zeros((2, 2), dtype=int)) == 0.0


def test_f_max_threshold_sweep_equals_direct_binary():
    # for a binary prediction every threshold in (0, 1] gives the same map
    for g in random_gts(3, seed=11):
        if not g.any():
            continue
        for p in all_binary_3x3():
            tp = float((p * g).sum())
            fp = float((p * (1 - g)).sum())
            prec = tp / (tp + fp) if tp + fp else 0.0
            direct = f_beta(prec, tp / g.sum(), 0.3)
            # threshold 0 predicts everything
            everything = f_beta(g.mean(), 1.0, 0.3)
            assert f_max(p, g) == pytest.approx(max(direct, everything), abs=1e-12)


def test_f_max_moves_toward_agreement():
    rng = np.random.default_rng(5)
    for _ in range(30):
        g = rng.integers(0, 2, (3, 3))
        if not g.any():
            continue
        p = rng.random((3, 3))
        i, j = rng.integers(0, 3, 2)
        q = p.copy()
        q[i, j] = g[i, j]
        before = oracles.f_max(p.tolist(), g.tolist())
        after = oracles.f_max(q.tolist(), g.tolist())
        assert f_max(q, g) == pytest.approx(after, abs=1e-12)
        # per threshold this can only add a true positive or drop a false positive
        assert after >= before - 1e-12


def test_f_weighted_examples():
    g = np.zeros((9, 9), dtype=int)
    g[3:6, 3:6] = 1
    assert f_weighted(g.astype(float), g) == pytest.approx(1.0, abs=1e-9)
    assert f_weighted(1.0 - g, g) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        f_weighted(np.zeros((3, 3)), np.zeros((3, 3), dtype=int))


def test_f_weighted_near_error_costs_less():
    g = np.zeros((5, 5), dtype=int)
    g[2, 2] = 1
    near = g.astype(float)
    near[2, 3] = 1.0
    far = g.astype(float)
    far[0, 0] = 1.0
    fw_near, fw_far = f_weighted(near, g), f_weighted(far, g)
    assert fw_near > fw_far
    # the straight-line transcription agrees (single foreground pixel: no ties)
    assert fw_near == pytest.approx(oracles.f_weighted(near.tolist(), g.tolist()), abs=1e-12)
    assert fw_far == pytest.approx(oracles.f_weighted(far.tolist(), g.tolist()), abs=1e-12)


def test_f_weighted_border_leakage_matches_oracle():
    # near the border the zero-padded smoothing lets some error leak away,
    # so total error scores slightly above zero
    g = np.zeros((5, 5), dtype=int)
    g[1:4, 1:4] = 1
    got = f_weighted(1.0 - g, g)
    assert 0.0 < got < 0.5
    assert got == pytest.approx(oracles.f_weighted((1.0 - g).tolist(), g.tolist()), abs=1e-12)


def test_f_weighted_tie_resolution_is_flip_symmetric():
    g = np.zeros((5, 5), dtype=bool)
    g[2, 0] = g[2, 4] = True
    p = g.astype(float)
    p[2, 0] = 0.2  # the two foreground pixels carry different errors
    a = f_weighted(p, g)
    assert a == pytest.approx(f_weighted(p[:, ::-1], g[:, ::-1]), abs=1e-12)
    assert a == pytest.approx(f_weighted(p[::-1], g[::-1]), abs=1e-12)


def test_f_weighted_matches_oracle_without_ties():
    rng = np.random.default_rng(9)
    g = np.zeros((7, 7), dtype=int)
    g[2:5, 3] = 1
    for _ in range(10):
        p = rng.random((7, 7))
        assert f_weighted(p, g) == pytest.approx(oracles.f_weighted(p.tolist(), g.tolist()), abs=1e-12)


def test_s_measure_blend_arithmetic():
    alpha, s_o, s_r = 0.5, 0.8, 0.6
    assert alpha * s_o + (1 - alpha) * s_r == pytest.approx(0.7)


def test_s_measure_degenerate_gt():
    bg = np.zeros((4, 4), dtype=int)
    assert s_measure(np.zeros((4, 4)), bg) == 1.0
    assert s_measure(np.ones((4, 4)), bg) == 0.0
    p = np.random.default_rng(0).random((4, 4))
    assert s_measure(p, bg) == pytest.approx(1 - p.mean())
    assert s_measure(p, np.ones((4, 4), dtype=int)) == pytest.approx(p.mean())


def test_s_measure_split_tie_is_flip_symmetric():
    g = np.zeros((4, 5), dtype=bool)
    g[1:3, 2] = True  # centroid exactly on a pixel centre
    p = np.random.default_rng(3).random((4, 5))
    assert s_measure(p, g) == pytest.approx(s_measure(p[:, ::-1], g[:, ::-1]), abs=1e-12)
    assert s_measure(p, g) == pytest.approx(oracles.s_measure(p.tolist(), g.astype(int).tolist()),
                                            abs=1e-12)


def test_s_measure_perfect():
    g = np.zeros((6, 6), dtype=int)
    g[1:4, 2:5] = 1
    assert s_measure(g.astype(float), g) == pytest.approx(1.0, abs=1e-12)


def test_e_measure_perfect_matches_oracle():
    g = np.array([[1, 0, 1], [0, 1, 1], [0, 0, 0]])
    val = e_measure_mean(g.astype(float), g)
    assert val == pytest.approx(oracles.e_measure_mean(g.tolist(), g.tolist()), abs=1e-12)
    curve = e_measure_curve(g.astype(float), g)
    np.testing.assert_allclose(curve[1:], 1.0, atol=1e-12)


def test_e_measure_anti_aligned_matches_oracle():
    g = np.array([[1, 0, 1], [0, 1, 1], [0, 0, 0]])
    p = 1.0 - g
    curve = e_measure_curve(p, g)
    for k in (1, 100, 255):
        expected = oracles.e_measure_single(oracles.binarize(p.tolist(), k / 255), g.tolist())
        assert curve[k] == pytest.approx(expected, abs=1e-12)


def test_e_measure_binary_threshold_invariance():
    rng = np.random.default_rng(4)
    for _ in range(10):
        g = rng.integers(0, 2, (4, 4))
        p = rng.integers(0, 2, (4, 4)).astype(float)
        curve = e_measure_curve(p, g)
        assert np.ptp(curve[1:]) == 0


def test_e_measure_degenerate_gt():
    p = np.array([[0.0, 1.0], [1.0, 0.2]])
    assert e_measure_mean(p, np.zeros((2, 2), dtype=int)) == pytest.approx(
        oracles.e_measure_mean(p.tolist(), [[0, 0], [0, 0]]))
    curve = e_measure_curve(p, np.ones((2, 2), dtype=int))
    assert curve[255] == 0.5  # half the pixels reach threshold 1


@pytest.mark.parametrize("name,fast,slow", [
    ("s_measure", s_measure, oracles.s_measure),
    ("e_mean", e_measure_mean, oracles.e_measure_mean),
    ("f_max", f_max, oracles.f_max),
])
def test_exhaustive_3x3_oracle(name, fast, slow):
    worst = 0.0
    for g in random_gts():
        gl = g.tolist()
        for p in all_binary_3x3():
            worst = max(worst, abs(fast(p, g) - slow(p.tolist(), gl)))
    assert worst <= 1e-9, name


def test_random_valued_predictions_match_oracle():
    rng = np.random.default_rng(12)
    for _ in range(40):
        g = rng.integers(0, 2, (4, 5))
        p = np.floor(rng.random((4, 5)) * 256) / 255
        p = np.clip(p, 0, 1)
        for fast, slow in ((s_measure, oracles.s_measure), (e_measure_mean, oracles.e_measure_mean),
                           (f_max, oracles.f_max), (mae, oracles.mae)):
            assert fast(p, g) == pytest.approx(slow(p.tolist(), g.tolist()), abs=1e-9)


def test_fixture_matches_frozen_oracle_values():
    p, g = fixture_arrays()
    got = evaluate_pair(p, g)
    for k in METRIC_NAMES:
        assert got[k] == pytest.approx(FIXTURE_EXPECTED[k], abs=1e-9), k


@settings(max_examples=30, deadline=None)
@given(masks16)
def test_flip_invariance(pg):
    p, g = pg
    if not g.any():
        g[3, 4] = True
    base = evaluate_pair(p, g)
    flipped = evaluate_pair(p[:, ::-1], g[:, ::-1])
    for k in METRIC_NAMES:
        assert flipped[k] == pytest.approx(base[k], abs=1e-9), k


@settings(max_examples=50, deadline=None)
@given(masks16)
def test_mae_complement(pg):
    p, g = pg
    assert mae(p, g) + mae(1 - p, g) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(masks16)
def test_metrics_in_unit_interval(pg):
    p, g = pg
    if not g.any():
        g[0, 0] = True
    for k, v in evaluate_pair(p, g).items():
        assert -1e-12 <= v <= 1 + 1e-12, k


def _write_mask(path, arr):
    write_image(Image(np.asarray(arr, dtype=np.float32)), path)


def _make_dirs(tmp_path, n=3, seed=0):
    rng = np.random.default_rng(seed)
    pred, gt = tmp_path / "pred", tmp_path / "gt"
    pred.mkdir()
    gt.mkdir()
    for i in range(n):
        g = np.zeros((8, 8))
        g[2:6, rng.integers(0, 3):6] = 1
        _write_mask(gt / f"im{i}.pgm", g)
        _write_mask(pred / f"im{i}.pgm", np.clip(g * 0.8 + rng.random((8, 8)) * 0.2, 0, 1))
    return pred, gt


def test_evaluate_identical_dirs(tmp_path):
    _, gt = _make_dirs(tmp_path)
    rep = evaluate_directory(gt, gt)
    m = rep.means
    assert rep.ok and len(rep.per_image) == 3
    for k in ("s_measure", "f_max", "f_weighted"):
        assert m[k] == pytest.approx(1.0, abs=1e-9), k
    assert m["mae"] == 0.0
    # the k = 0 threshold turns every pixel on, so only k >= 1 reproduce g
    for name, _ in rep.per_image:
        g = load_gt(gt / name)
        np.testing.assert_allclose(e_measure_curve(g.astype(float), g)[1:], 1.0, atol=1e-12)
    expected = np.mean([oracles.e_measure_mean(load_gt(gt / n).astype(float).tolist(),
                                               load_gt(gt / n).astype(int).tolist())
                        for n, _ in rep.per_image])
    assert m["e_mean"] == pytest.approx(expected, abs=1e-9)


def test_evaluate_missing_file(tmp_path, caplog):
    pred, gt = _make_dirs(tmp_path, n=4)
    os.remove(pred / "im2.pgm")
    rep = evaluate_directory(pred, gt)
    assert [n for n, _ in rep.per_image] == ["im0.pgm", "im1.pgm", "im3.pgm"]
    assert rep.missing == ["im2.pgm"] and not rep.ok
    assert "im2.pgm" in caplog.text


def test_evaluate_order_independent(tmp_path, monkeypatch):
    pred, gt = _make_dirs(tmp_path, n=5)
    a = evaluate_directory(pred, gt).to_kv()
    real_listdir = os.listdir
    monkeypatch.setattr(os, "listdir", lambda d: list(reversed(real_listdir(d))))
    assert evaluate_directory(pred, gt).to_kv() == a


def test_report_formats(tmp_path):
    pred, gt = _make_dirs(tmp_path, n=2)
    rep = evaluate_directory(pred, gt)
    kv = rep.format("kv").splitlines()
    assert kv[0].startswith("record=image name=im0.pgm ")
    assert kv[-1].startswith("record=mean count=2 missing=0 ")
    fields = dict(item.split("=") for item in kv[-1].split())
    assert float(fields["mae"]) == rep.means["mae"]
    assert rep.format("text").splitlines()[-1].startswith("mean(n=2)")
    with pytest.raises(ValueError):
        rep.format("json")
