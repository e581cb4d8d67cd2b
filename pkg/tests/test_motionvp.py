import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vpguide import autograd as ag
from vpguide.motionvp import (DIRECTIONS, PatchGrid, assign_direction, assign_directions, dynamic_context,
                              dynamic_context_var, partition_patches, patch_vp_or_center, pixel_vp_to_patch,
                              sample_patch_coords, sampling_offset, tile_patches)
from vpguide.tensor import grad_check
from vpguide.vpdetect import VpEstimate

from oracles import dense_attention


def brute_direction(patch, vp):
    dx, dy = vp[0] - patch[0], vp[1] - patch[1]
    if dx == 0 and dy == 0:
        return DIRECTIONS[0]
    dists = [abs(math.atan2(v, u) - math.atan2(dy, dx)) for u, v in DIRECTIONS]
    return DIRECTIONS[int(np.argmin(dists))]


def test_direction_table():
    assert DIRECTIONS == ((1, 0), (1, 1), (0, 1), (-1, 1))


@pytest.mark.parametrize("vp,expected", [((5, 0), (1, 0)), ((5, 5), (1, 1)), ((0, 5), (0, 1)),
                                         ((-5, 5), (-1, 1)), ((0, 0), (1, 0)), ((-5, 0), (-1, 1)),
                                         ((0, -5), (1, 0))])
def test_assign_direction_examples(vp, expected):
    assert assign_direction((0, 0), vp) == expected


@given(st.floats(0, 31, allow_nan=False), st.floats(0, 31, allow_nan=False), st.integers(1, 32), st.integers(1, 32))
def test_assign_direction_is_brute_force_argmin(vx, vy, gw, gh):
    grid = PatchGrid(gh, gw, 1)
    dirs = assign_directions(grid, (vx, vy))
    for x, y in grid.patches():
        assert tuple(dirs[y, x]) == brute_direction((x, y), (vx, vy))


@given(st.integers(1, 3), st.integers(1, 3), st.sampled_from(DIRECTIONS), st.integers(0, 9), st.integers(0, 9),
       st.integers(1, 4))
def test_sampling_is_linear_in_gap(m, dd, direction, x, y, k):
    t = 3 * k
    fwd, bwd, local = sample_patch_coords((x, y), direction, t - m * k, t, k, dd)
    u, v = direction
    assert fwd == (x + m * dd * u, y + m * dd * v)
    assert bwd == (x - m * dd * u, y - m * dd * v)
    assert local == (x, y)


def test_sampling_clamps_into_grid():
    grid = PatchGrid(8, 8, 2)
    fwd, bwd, local = sample_patch_coords((3, 0), (1, 1), 0, 6, 3, 1, grid)
    assert fwd == (3, 2) and bwd == (1, 0) and local == (3, 0)


def test_sampling_offset_errors():
    with pytest.raises(ValueError, match="earlier"):
        sampling_offset((1, 0), 3, 3, 3, 1)
    with pytest.raises(ValueError, match="multiple"):
        sampling_offset((1, 0), 1, 3, 3, 1)


def test_patch_grid_validation():
    with pytest.raises(ValueError):
        PatchGrid(10, 8, 4)
    g = PatchGrid(8, 12, 4)
    assert (g.gh, g.gw, g.center) == (2, 3, (1.0, 0.5))


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3))
def test_partition_tile_roundtrip(c, gh, gw, s):
    f = np.arange(c * gh * s * gw * s, dtype=float).reshape(c, gh * s, gw * s)
    parts = partition_patches(f, s)
    assert parts.shape == (gh, gw, c, s * s)
    np.testing.assert_array_equal(tile_patches(parts), f)
    grid = PatchGrid(gh * s, gw * s, s)
    flat = f.reshape(c, -1)
    for x, y in grid.patches():
        np.testing.assert_array_equal(flat[:, grid.patch_indices(x, y)], parts[y, x])


def test_pixel_vp_mapping():
    # frame 256x512 -> features 16x32 with s=4 -> grid 4x8
    assert pixel_vp_to_patch((256.0, 128.0), (256, 512), (16, 32), 4) == (4.0, 2.0)
    assert pixel_vp_to_patch((10_000.0, -5.0), (256, 512), (16, 32), 4) == (7.0, 0.0)
    with pytest.raises(ValueError):
        pixel_vp_to_patch(VpEstimate.invalid(), (256, 512), (16, 32), 4)
    assert patch_vp_or_center(VpEstimate.invalid(), (256, 512), (16, 32), 4) == (3.5, 1.5)
    assert patch_vp_or_center(VpEstimate(256.0, 128.0), (256, 512), (16, 32), 4) == (4.0, 2.0)


def oracle_dynamic_context(features, vps, weights, s, k, dd):
    wq, wk, wv = weights
    c, h, w = features[0].shape
    grid = PatchGrid(h, w, s)
    n = len(features) - 1
    t = n * k
    flat = [f.reshape(c, -1) for f in features]
    out = np.zeros((c, h * w))
    for x, y in grid.patches():
        idx = grid.patch_indices(x, y)
        picked = [flat[j][:, grid.patch_indices(*xy)] for j in range(n)
                  for xy in sample_patch_coords((x, y), brute_direction((x, y), vps[j]), j * k, t, k, dd, grid)]
        keys = np.concatenate([wk @ p for p in picked], axis=1)
        vals = np.concatenate([wv @ p for p in picked], axis=1)
        out[:, idx] = dense_attention(wq @ flat[-1][:, idx], keys, vals)
    return out.reshape(c, h, w)


@pytest.mark.parametrize("dd", [1, 2])
def test_dynamic_context_matches_oracle(rng, dd):
    c, h, w, s = 3, 8, 12, 2
    feats = [rng.normal(size=(c, h, w)) for _ in range(3)]
    vps = [(4.2, 1.0), (2.0, 3.0), (5.0, 0.5)]
    weights = [rng.normal(size=(c, c)) for _ in range(3)]
    got = np.asarray(dynamic_context(feats, vps, weights, s, 3, dd), dtype=np.float64)
    np.testing.assert_allclose(got, oracle_dynamic_context(feats, vps, weights, s, 3, dd), rtol=1e-5, atol=1e-5)


def test_static_frames_stay_in_the_hull(rng):
    c, h, w = 2, 8, 8
    frame = rng.normal(size=(c, h, w))
    eye = np.eye(c)
    out = np.asarray(dynamic_context([frame, frame], [(1.5, 1.5)] * 2, [eye, eye, eye], 2, 3, 1))
    flat = frame.reshape(c, -1)
    assert np.all(out.reshape(c, -1) >= flat.min(axis=1, keepdims=True) - 1e-5)
    assert np.all(out.reshape(c, -1) <= flat.max(axis=1, keepdims=True) + 1e-5)
    const = np.full((c, h, w), 0.25)
    np.testing.assert_allclose(np.asarray(dynamic_context([const, const], [(0, 0)] * 2, [eye] * 3, 2)), 0.25,
                               rtol=1e-6)


def test_dynamic_context_errors(rng):
    f = rng.normal(size=(2, 4, 4))
    eye = [np.eye(2)] * 3
    with pytest.raises(ValueError):
        dynamic_context([f], [(0, 0)], eye, 2)
    with pytest.raises(ValueError):
        dynamic_context([f, f], [(0, 0)], eye, 2)
    with pytest.raises(ValueError):
        dynamic_context([f, rng.normal(size=(2, 4, 8))], [(0, 0)] * 2, eye, 2)


def test_dynamic_context_gradient(rng):
    c, h, w = 2, 4, 4
    feats = [rng.normal(size=(c, h, w)) for _ in range(2)]
    probe = rng.normal(size=(c, h * w))

    def f(p):
        out = dynamic_context_var(feats, [(1.0, 0.0), (0.0, 1.0)], [p["wq"], p["wk"], p["wv"]], 2)
        return ag.total(ag.mul(out, probe))

    x = {name: rng.normal(size=(c, c)) for name in ("wq", "wk", "wv")}
    assert grad_check(f, x) < 1e-4
