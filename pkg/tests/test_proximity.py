import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vpguide.proximity import VARIANTS, crop_with_map, proximity_map


def loop_map(vp, h, w, variant):
    x0, y0 = vp
    d = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            m = max(abs(y - y0) / h, abs(x - x0) / w)
            if variant == "linear":
                d[y, x] = m
            elif variant == "power":
                d[y, x] = math.sqrt(m)
            else:
                d[y, x] = math.sqrt((abs(y - y0) / h) ** 2 + (abs(x - x0) / h) ** 2)
    return 1.0 - d / d.max()


@pytest.mark.parametrize("variant", VARIANTS)
def test_matches_pixel_loop(variant):
    got = proximity_map((13.0, 4.0), 11, 20, variant)
    np.testing.assert_allclose(got.values, loop_map((13.0, 4.0), 11, 20, variant), atol=1e-6)
    assert got.values.dtype == np.float32 and got.variant == variant


@given(st.sampled_from(VARIANTS), st.integers(0, 15), st.integers(0, 9))
def test_range_peak_and_floor(variant, x, y):
    m = proximity_map((x, y), 10, 16, variant).values
    assert m[y, x] == pytest.approx(1.0)
    assert m.min() == pytest.approx(0.0, abs=1e-6)
    assert np.all((m >= 0) & (m <= 1))


def test_center_euclidean_is_symmetric_under_half_turn():
    m = proximity_map((10.0, 6.0), 13, 21, "euclidean").values
    np.testing.assert_allclose(m, m[::-1, ::-1], atol=1e-6)


@pytest.mark.parametrize("variant", ["linear", "power"])
def test_square_level_sets(variant):
    h, w = 41, 41
    m = proximity_map((20, 20), h, w, variant).values
    for r in (3, 7, 12):
        # corners and edge midpoints of the same normalized square share a value
        probes = [m[20 - r, 20 - r], m[20 + r, 20 + r], m[20 - r, 20 + r], m[20, 20 + r]]
        assert np.ptp(probes) < 1e-6


def test_euclidean_level_sets_are_circles():
    m = proximity_map((20, 20), 41, 41, "euclidean").values
    for r in (5, 12):
        probes = [m[20 + r, 20], m[20 - r, 20], m[20, 20 + r], m[20, 20 - r]]
        assert np.ptp(probes) < 1e-6
        assert m[20 + r, 20 + r] < m[20 + r, 20]


def test_euclidean_scales_both_axes_by_height():
    m = proximity_map((0, 0), 10, 40, "euclidean").values
    # the farthest corner is (39, 9): sqrt(0.9^2 + 3.9^2)
    far = math.hypot(0.9, 3.9)
    assert m[0, 10] == pytest.approx(1 - 1.0 / far, abs=1e-6)


def test_monotone_along_rays():
    for variant in VARIANTS:
        m = proximity_map((5, 5), 32, 32, variant).values
        assert np.all(np.diff(m[5, 5:]) <= 1e-7)
        assert np.all(np.diff(m[5:, 5]) <= 1e-7)


def test_errors():
    with pytest.raises(ValueError, match="outside"):
        proximity_map((20, 3), 10, 20)
    with pytest.raises(ValueError, match="variant"):
        proximity_map((2, 3), 10, 20, "cubic")


def test_crop_keeps_values_and_shifts_vp():
    frame = np.arange(200).reshape(10, 20)
    pmap = proximity_map((12, 4), 10, 20)
    cropped, sub = crop_with_map(frame, pmap, (5, 2, 8, 6))
    np.testing.assert_array_equal(cropped, frame[2:8, 5:13])
    np.testing.assert_array_equal(sub.values, pmap.values[2:8, 5:13])
    assert sub.vp == (7.0, 2.0)
    with pytest.raises(ValueError):
        crop_with_map(frame, pmap, (15, 0, 10, 5))


def test_resized_and_tensor():
    pmap = proximity_map((8, 4), 16, 32)
    assert pmap.resized(4, 8).shape == (4, 8)
    assert pmap.to_tensor().shape == (16, 32)
