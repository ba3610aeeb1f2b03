import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from bedsam.dataio import Image
from bedsam.structmap import (COMPONENTS, attach_channel, center_depth, cumulative_structure_map,
                              invert_depth, sobel_soft_edges)

depth_maps = arrays(np.float64, st.tuples(st.integers(3, 12), st.integers(3, 12)),
                    elements=st.floats(0, 1, allow_nan=False))


def sobel_oracle(d):
    """Independent route: scipy correlation with the textbook kernels."""
    gx_k = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
    gx = ndimage.correlate(d.astype(np.float64), gx_k, mode="constant")
    gy = ndimage.correlate(d.astype(np.float64), gx_k.T, mode="constant")
    out = np.hypot(gx, gy) / (4 * math.sqrt(2))
    out[0, :] = out[-1, :] = out[:, 0] = out[:, -1] = 0
    return out


@pytest.mark.parametrize("d,expected", [(0.5, 0.0), (0.0, 1.0), (1.0, 1.0), (0.25, 0.5)])
def test_center_depth(d, expected):
    assert center_depth(np.full((2, 2), d))[0, 0] == expected


def test_invert_depth_constant_is_zero():
    assert not invert_depth(np.full((4, 4), 0.7)).any()


def test_invert_depth_endpoints():
    out = invert_depth(np.array([[0.0, 1.0]]), 0.01)
    # raw values 100 and 1/1.01, then min-max
    assert out.tolist() == [[1.0, 0.0]]


def test_invert_depth_reverses_order():
    d = np.linspace(0, 1, 10).reshape(2, 5)
    inv = invert_depth(d)
    assert np.all(np.diff(inv.ravel()) < 0)


def test_invert_depth_epsilon_positive():
    with pytest.raises(ValueError):
        invert_depth(np.zeros((3, 3)), 0.0)


def test_sobel_constant_is_zero():
    assert not sobel_soft_edges(np.full((5, 6), 0.3)).any()


def test_sobel_step_center():
    d = np.array([[0, 0, 0], [0, 0, 0], [1, 1, 1]], dtype=np.float64)
    e = sobel_soft_edges(d)
    assert e[1, 1] == pytest.approx(4 / (4 * math.sqrt(2)), abs=1e-12)
    assert e[1, 1] == pytest.approx(0.7071, abs=1e-4)


def test_sobel_too_small():
    with pytest.raises(ValueError):
        sobel_soft_edges(np.zeros((2, 5)))


def test_sobel_mirror():
    d = np.random.default_rng(0).random((7, 9))
    assert np.array_equal(sobel_soft_edges(d[:, ::-1]), sobel_soft_edges(d)[:, ::-1])


def test_sobel_row_ramp_is_constant():
    w = 9
    d = np.tile(np.arange(w) / (w - 1), (6, 1))
    e = sobel_soft_edges(d)
    step = 1 / (w - 1)
    # Gx sums (1 + 2 + 1) rows of a two-pixel difference: 4 * 2 * step
    expected = 8 * step / (4 * math.sqrt(2))
    np.testing.assert_allclose(e[1:-1, 1:-1], expected, rtol=0, atol=1e-12)
    np.testing.assert_allclose(e[1:-1, 1:-1], sobel_oracle(d)[1:-1, 1:-1], atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(depth_maps)
def test_sobel_matches_scipy_oracle(d):
    np.testing.assert_allclose(sobel_soft_edges(d), sobel_oracle(d), atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(depth_maps)
def test_sobel_sign_invariance(d):
    np.testing.assert_allclose(sobel_soft_edges(d), sobel_soft_edges(1 - d), rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(3, 10), st.integers(3, 10)), elements=st.integers(0, 256)))
def test_sobel_sign_invariance_exact_on_dyadic_levels(levels):
    d = levels / 256.0  # 1 - d is exact for these values
    assert np.array_equal(sobel_soft_edges(d), sobel_soft_edges(1 - d))


@settings(max_examples=60, deadline=None)
@given(depth_maps)
def test_structure_map_bounded_and_zero_border(d):
    s = cumulative_structure_map(d)
    assert s.min() >= 0 and s.max() <= 1
    assert not s[0].any() and not s[-1].any() and not s[:, 0].any() and not s[:, -1].any()
    assert np.array_equal(s, cumulative_structure_map(d))


@settings(max_examples=60, deadline=None)
@given(depth_maps)
def test_center_depth_bounded(d):
    c = center_depth(d)
    assert c.min() >= 0 and c.max() <= 1


def test_structure_map_constant_depth():
    for r in range(1, 4):
        for comps in itertools.combinations(COMPONENTS, r):
            assert not cumulative_structure_map(np.full((6, 6), 0.4), comps).any()


def test_single_component_equals_sobel():
    d = np.random.default_rng(1).random((8, 8))
    assert np.array_equal(cumulative_structure_map(d, ["depth"]), sobel_soft_edges(d))


def test_cumulative_dominates_single_components():
    d = np.random.default_rng(2).random((10, 10)) * 0.3
    singles = {
        "depth": sobel_soft_edges(d),
        "inverse": sobel_soft_edges(invert_depth(d)),
        "centered": sobel_soft_edges(center_depth(d)),
    }
    full = cumulative_structure_map(d)
    assert np.all(full >= np.clip(np.maximum.reduce(list(singles.values())), 0, 1) - 1e-15)
    np.testing.assert_allclose(full, np.clip(sum(singles.values()), 0, 1))


def test_empty_components_rejected():
    with pytest.raises(ValueError):
        cumulative_structure_map(np.zeros((3, 3)), [])
    with pytest.raises(ValueError):
        cumulative_structure_map(np.zeros((3, 3)), ["disparity"])


def test_attach_channel():
    img = Image(np.array([[[0.1, 0.2, 0.3]]], dtype=np.float32))
    t = attach_channel(img, np.array([[0.9]], dtype=np.float32))
    assert t.shape == (4, 1, 1)
    np.testing.assert_array_equal(t[:, 0, 0], np.float32([0.1, 0.2, 0.3, 0.9]))


def test_attach_channel_shape_and_zero():
    rgb = np.random.default_rng(3).random((5, 7, 3)).astype(np.float32)
    t = attach_channel(rgb, np.zeros((5, 7), np.float32))
    assert t.shape == (4, 5, 7)
    assert not t[3].any()
    with pytest.raises(ValueError):
        attach_channel(rgb, np.zeros((7, 5), np.float32))
