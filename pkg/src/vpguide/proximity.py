"""VP proximity maps: pseudo-depth that is 1 at the VP and 0 at the farthest pixel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, bilinear_resize

VARIANTS = ("linear", "power", "euclidean")


@dataclass(frozen=True)
class ProximityMap:
    values: np.ndarray  # H x W float32 in [0, 1]
    variant: str
    vp: tuple[float, float]  # (x, y) in this map's pixel frame

    @property
    def shape(self):
        return self.values.shape

    def to_tensor(self) -> Tensor:
        return Tensor(self.values)

    def resized(self, h: int, w: int) -> np.ndarray:
        """The map at feature resolution, as used for the attention bias."""
        return np.asarray(bilinear_resize(self.values[None], h, w))[0]


def distance_field(vp, h: int, w: int, variant: str) -> np.ndarray:
    """Unnormalized distance to the VP for every pixel center."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown proximity variant {variant!r}; expected one of {VARIANTS}")
    x0, y0 = vp
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = np.abs(ys - y0), np.abs(xs - x0)
    if variant == "linear":
        return np.maximum(dy / h, dx / w)
    if variant == "power":
        return np.sqrt(np.maximum(dy / h, dx / w))
    # both axes scaled by the height, which ignores the aspect ratio on purpose
    return np.sqrt((dy / h) ** 2 + (dx / h) ** 2)


def proximity_map(vp, h: int, w: int, variant: str = "linear") -> ProximityMap:
    x0, y0 = vp
    if not (0 <= x0 < w and 0 <= y0 < h):
        raise ValueError(f"VP {vp} lies outside the {w}x{h} image")
    d = distance_field(vp, h, w, variant)
    peak = d.max()
    if peak > 0:
        d = d / peak
    return ProximityMap((1.0 - d).astype(np.float32), variant, (float(x0), float(y0)))


def crop_with_map(frame, pmap: ProximityMap, rect):
    """Crop a frame and its map with the same ``(x, y, width, height)`` rectangle.

    The cropped map keeps its values; it is not renormalized.
    """
    arr = np.asarray(frame)
    x, y, cw, ch = rect
    if arr.shape[-2:] != pmap.shape:
        raise ValueError(f"frame {arr.shape} and map {pmap.shape} differ in size")
    h, w = pmap.shape
    if cw < 1 or ch < 1 or x < 0 or y < 0 or x + cw > w or y + ch > h:
        raise ValueError(f"crop {rect} is outside the {w}x{h} image")
    cropped = arr[..., y:y + ch, x:x + cw]
    values = pmap.values[y:y + ch, x:x + cw]
    return cropped, ProximityMap(values, pmap.variant, (pmap.vp[0] - x, pmap.vp[1] - y))
