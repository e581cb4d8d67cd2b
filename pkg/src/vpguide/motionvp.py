"""VP-guided motion fusion.

Each s x s feature patch gets one of four axis directions (the one whose
angle is closest to the patch->VP vector). Keys and values for the patch are
the forward, backward and local patches along that direction in each earlier
frame, with the step growing linearly in the frame gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .tensor import Tensor

DIRECTIONS = ((1, 0), (1, 1), (0, 1), (-1, 1))


@dataclass(frozen=True)
class PatchGrid:
    h: int
    w: int
    s: int

    def __post_init__(self):
        if self.s < 1 or self.h % self.s or self.w % self.s:
            raise ValueError(f"patch size {self.s} must divide the feature map {self.h}x{self.w}")

    @property
    def gh(self):
        return self.h // self.s

    @property
    def gw(self):
        return self.w // self.s

    @property
    def center(self):
        return ((self.gw - 1) / 2, (self.gh - 1) / 2)

    def clamp(self, x, y):
        return min(max(x, 0), self.gw - 1), min(max(y, 0), self.gh - 1)

    def patch_indices(self, x: int, y: int) -> np.ndarray:
        """Flat (row-major, h*w) feature indices of patch (x, y), row-major inside the patch."""
        s = self.s
        rows = np.arange(y * s, y * s + s)
        cols = np.arange(x * s, x * s + s)
        return (rows[:, None] * self.w + cols[None, :]).ravel()

    def patches(self):
        """Patch indices (x, y) in row-major order."""
        return [(x, y) for y in range(self.gh) for x in range(self.gw)]


def partition_patches(features, s: int) -> np.ndarray:
    """Split c x h x w into a (gh, gw, c, s*s) array of flattened patches."""
    f = np.asarray(features)
    if f.ndim != 3:
        raise ValueError(f"expected c x h x w features, got shape {f.shape}")
    c, h, w = f.shape
    grid = PatchGrid(h, w, s)
    blocks = f.reshape(c, grid.gh, s, grid.gw, s).transpose(1, 3, 0, 2, 4)
    return blocks.reshape(grid.gh, grid.gw, c, s * s)


def tile_patches(patches) -> np.ndarray:
    """Inverse of :func:`partition_patches`."""
    p = np.asarray(patches)
    gh, gw, c, ss = p.shape
    s = math.isqrt(ss)
    if s * s != ss:
        raise ValueError(f"patch width {ss} is not a square")
    return p.reshape(gh, gw, c, s, s).transpose(2, 0, 3, 1, 4).reshape(c, gh * s, gw * s)


def pixel_vp_to_patch(vp, frame_hw, feature_hw, s: int):
    """Pixel VP -> continuous patch-grid coordinate, clamped into the grid."""
    if not getattr(vp, "valid", True):
        raise ValueError("cannot map an invalid VP estimate; use the grid center instead")
    x, y = (vp.x, vp.y) if hasattr(vp, "x") else vp
    big_h, big_w = frame_hw
    h, w = feature_hw
    grid = PatchGrid(h, w, s)
    px = x * w / (big_w * s)
    py = y * h / (big_h * s)
    return (min(max(px, 0.0), grid.gw - 1.0), min(max(py, 0.0), grid.gh - 1.0))


def patch_vp_or_center(vp, frame_hw, feature_hw, s: int):
    """Like :func:`pixel_vp_to_patch`, falling back to the grid center for invalid VPs."""
    if vp is None or not getattr(vp, "valid", True):
        return PatchGrid(*feature_hw, s).center
    return pixel_vp_to_patch(vp, frame_hw, feature_hw, s)


def angular_distance(direction, delta) -> float:
    """``|atan2(v, u) - atan2(dy, dx)|`` with no wrap-around."""
    u, v = direction
    dx, dy = delta
    return abs(math.atan2(v, u) - math.atan2(dy, dx))


def assign_direction(patch, vp):
    """Candidate direction angularly closest to the patch -> VP vector.

    Ties keep the first candidate in ``DIRECTIONS``; a zero vector maps to (1, 0).
    """
    delta = (vp[0] - patch[0], vp[1] - patch[1])
    if delta == (0, 0) or delta == (0.0, 0.0):
        return DIRECTIONS[0]
    best, best_d = DIRECTIONS[0], math.inf
    for cand in DIRECTIONS:
        d = angular_distance(cand, delta)
        if d < best_d:
            best, best_d = cand, d
    return best


def assign_directions(grid: PatchGrid, vp) -> np.ndarray:
    """(gh, gw, 2) array of assigned (u, v) per patch."""
    out = np.zeros((grid.gh, grid.gw, 2), dtype=np.int64)
    for x, y in grid.patches():
        out[y, x] = assign_direction((x, y), vp)
    return out


def sampling_offset(direction, j: int, t: int, k: int, delta_d: int):
    """Step ``(t - j) / k * delta_d * (u, v)`` for an earlier frame j."""
    if j >= t:
        raise ValueError(f"only earlier frames can be sampled (j={j}, t={t})")
    steps, rem = divmod(t - j, k)
    if rem:
        raise ValueError(f"frame gap {t - j} is not a multiple of the interval k={k}")
    u, v = direction
    return (steps * delta_d * u, steps * delta_d * v)


def sample_patch_coords(patch, direction, j: int, t: int, k: int, delta_d: int, grid: PatchGrid | None = None):
    """Forward, backward and local patch coordinates in frame j.

    With a grid the coordinates are clamped componentwise into it;
    without one the raw coordinates are returned.
    """
    du, dv = sampling_offset(direction, j, t, k, delta_d)
    x, y = patch
    fwd, bwd, local = (x + du, y + dv), (x - du, y - dv), (x, y)
    if grid is not None:
        fwd, bwd, local = grid.clamp(*fwd), grid.clamp(*bwd), grid.clamp(*local)
    return fwd, bwd, local


def sample_indices(grid: PatchGrid, patch, vp, j, t, k, delta_d) -> np.ndarray:
    """Flat feature indices of the 3 s^2 sampled columns (forward, backward, local)."""
    direction = assign_direction(patch, vp)
    coords = sample_patch_coords(patch, direction, j, t, k, delta_d, grid)
    return np.concatenate([grid.patch_indices(*xy) for xy in coords])


def dynamic_context_var(features, vps, weights, s: int, k: int = 3, delta_d: int = 1):
    """Differentiable dynamic context F'_t as a c x (h*w) Var.

    ``features`` are c x h x w maps ordered oldest to newest, spaced k frames
    apart, with the target frame last. ``vps`` are the matching patch-level
    VPs and ``weights`` the (W_q, W_k, W_v) c x c projections.
    """
    if len(features) < 2:
        raise ValueError("dynamic context needs the target frame and at least one earlier frame")
    if len(vps) != len(features):
        raise ValueError(f"{len(vps)} VPs for {len(features)} frames")
    shapes = {tuple(f.shape) for f in features}
    if len(shapes) != 1:
        raise ValueError(f"frames have mismatched feature shapes: {sorted(shapes)}")
    c, h, w = features[0].shape
    grid = PatchGrid(h, w, s)
    wq, wk, wv = weights
    flat = [ag.reshape(ag.as_var(f), (c, h * w)) for f in features]
    n = len(features) - 1
    t = n * k
    queries = ag.matmul(wq, flat[-1])
    keys = [ag.matmul(wk, f) for f in flat[:-1]]
    values = [ag.matmul(wv, f) for f in flat[:-1]]

    outputs, order = [], []
    for patch in grid.patches():
        idx = grid.patch_indices(*patch)
        cols = [sample_indices(grid, patch, vps[j], j * k, t, k, delta_d) for j in range(n)]
        kk = ag.concat_cols([ag.take_cols(kj, ci) for kj, ci in zip(keys, cols)])
        vv = ag.concat_cols([ag.take_cols(vj, ci) for vj, ci in zip(values, cols)])
        outputs.append(ag.attention(ag.take_cols(queries, idx), kk, vv))
        order.append(idx)
    stacked = ag.concat_cols(outputs)
    inverse = np.empty(h * w, dtype=np.intp)
    inverse[np.concatenate(order)] = np.arange(h * w)
    return ag.take_cols(stacked, inverse)


def dynamic_context(features, vps, weights, s: int = 4, k: int = 3, delta_d: int = 1) -> Tensor:
    c, h, w = np.shape(features[0])
    out = dynamic_context_var([np.asarray(f) for f in features], vps,
                              [np.asarray(wt, dtype=np.float64) for wt in weights], s, k, delta_d)
    return Tensor(out.value.reshape(c, h, w))
