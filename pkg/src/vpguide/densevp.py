"""Sparse-to-dense feature mining around the VP patch."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .motionvp import PatchGrid
from .tensor import Tensor


@dataclass(frozen=True)
class VpRegion:
    center: tuple[int, int]  # VP patch (x, y)
    a: int
    b: int
    x_range: tuple[int, int]  # inclusive patch-index bounds after clipping
    y_range: tuple[int, int]

    @property
    def members(self):
        (x0, x1), (y0, y1) = self.x_range, self.y_range
        return [(x, y) for y in range(y0, y1 + 1) for x in range(x0, x1 + 1)]

    @property
    def nominal_count(self):
        return (2 * self.a + 1) * (2 * self.b + 1)

    @property
    def count(self):
        (x0, x1), (y0, y1) = self.x_range, self.y_range
        return (x1 - x0 + 1) * (y1 - y0 + 1)

    def to_dict(self):
        return {
            "vp_patch": list(self.center),
            "a": self.a,
            "b": self.b,
            "members": [list(m) for m in self.members],
            "nominal_count": self.nominal_count,
            "count": self.count,
        }


def vp_patch(vp, grid: PatchGrid):
    """Nearest patch index to a continuous VP; ties go to smaller y, then smaller x."""
    x, y = vp
    # candidates are the floor/ceil neighbours on each axis
    xs = sorted({min(max(math.floor(x), 0), grid.gw - 1), min(max(math.ceil(x), 0), grid.gw - 1)})
    ys = sorted({min(max(math.floor(y), 0), grid.gh - 1), min(max(math.ceil(y), 0), grid.gh - 1)})
    best = None
    for cy in ys:
        for cx in xs:
            d = (cx - x) ** 2 + (cy - y) ** 2
            if best is None or d < best[0]:
                best = (d, (cx, cy))
    return best[1]


def vp_region(center, a: int, b: int, grid: PatchGrid) -> VpRegion:
    if a < 0 or b < 0:
        raise ValueError(f"region half-extents must be >= 0, got a={a}, b={b}")
    cx, cy = center
    x_range = (max(cx - a, 0), min(cx + a, grid.gw - 1))
    y_range = (max(cy - b, 0), min(cy + b, grid.gh - 1))
    return VpRegion((cx, cy), a, b, x_range, y_range)


def dense_stride(s: int) -> int:
    return -(-s // 2)


def nominal_dense_count(a: int, b: int, s: int) -> int:
    stride = dense_stride(s)
    return (2 * a * s // stride + 1) * (2 * b * s // stride + 1)


def dense_window_origins(region: VpRegion, grid: PatchGrid):
    """Top-left feature cells (row, col) of the overlapping s x s windows, row-major."""
    s = grid.s
    stride = dense_stride(s)
    (x0, x1), (y0, y1) = region.x_range, region.y_range

    def axis(lo, hi, limit):
        start, span = lo * s, (hi - lo + 1) * s
        return [min(start + i * stride, limit - s) for i in range((span - s) // stride + 1)]

    rows = axis(y0, y1, grid.h)
    cols = axis(x0, x1, grid.w)
    return [(r, c) for r in rows for c in cols]


def dense_indices(region: VpRegion, grid: PatchGrid) -> np.ndarray:
    s = grid.s
    offs = (np.arange(s)[:, None] * grid.w + np.arange(s)[None, :]).ravel()
    return np.concatenate([r * grid.w + c + offs for r, c in dense_window_origins(region, grid)])


def dense_partition(features, region: VpRegion, s: int) -> Tensor:
    """c x (m s^2) concatenation of the dense windows, each flattened row-major."""
    f = np.asarray(features)
    c, h, w = f.shape
    grid = PatchGrid(h, w, s)
    if region.count < 1:
        raise ValueError("empty VP region")
    return Tensor(f.reshape(c, h * w)[:, dense_indices(region, grid)])


def augment_context_var(context, dense, weights):
    """Cross-attention from every position of F'_t (c x hw) to the dense VP-region features."""
    wq, wk, wv = weights
    return ag.attention(ag.matmul(wq, context), ag.matmul(wk, dense), ag.matmul(wv, dense))


def augment_context(context, dense, weights) -> Tensor:
    ctx = np.asarray(context)
    c, h, w = ctx.shape
    dense = np.asarray(dense)
    if dense.ndim != 2 or dense.shape[0] != c:
        raise ValueError(f"dense features {dense.shape} do not match context channels {c}")
    out = augment_context_var(ctx.reshape(c, h * w), dense, [np.asarray(x, dtype=np.float64) for x in weights])
    return Tensor(out.value.reshape(c, h, w))
