"""Classical vanishing-point detection.

Opening -> Canny on the lower two thirds -> Hough lines -> line filtering ->
pairwise intersections -> vote over overlapping square cells.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

# OpenCV-style separable Sobel kernels per aperture size
_SOBEL = {
    3: ([1, 2, 1], [-1, 0, 1]),
    5: ([1, 4, 6, 4, 1], [-1, -2, 0, 2, 1]),
    7: ([1, 6, 15, 20, 15, 6, 1], [-1, -4, -5, 0, 5, 4, 1]),
}
_TAN_22_5 = math.tan(math.pi / 8)
_TAN_67_5 = math.tan(3 * math.pi / 8)


@dataclass(frozen=True)
class VpConfig:
    kernel_size: int = 5
    canny_low: float = 50.0
    canny_high: float = 150.0
    aperture: int = 3
    rho_res: float = 1.0
    theta_res: float = math.pi / 180
    hough_threshold: int = 200
    d_max: float = 160.0
    slope_intervals: tuple = ((-5.0, -0.2), (0.2, 5.0))
    max_lines: int = 100
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["slope_intervals"] = [list(iv) for iv in self.slope_intervals]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown VP config keys: {sorted(unknown)}")
        if "slope_intervals" in d:
            d["slope_intervals"] = tuple(tuple(float(v) for v in iv) for iv in d["slope_intervals"])
        return cls(**d)


@dataclass(frozen=True)
class HoughLine:
    rho: float
    theta: float
    votes: int = 0

    @property
    def slope(self) -> float:
        """dy/dx of the line direction in image coordinates (rows grow downward)."""
        s = math.sin(self.theta)
        if s == 0.0:
            return math.inf
        return -math.cos(self.theta) / s


@dataclass(frozen=True)
class VpEstimate:
    x: float
    y: float
    votes: int = 0
    valid: bool = True

    @classmethod
    def invalid(cls):
        return cls(math.nan, math.nan, 0, False)

    def to_dict(self):
        if not self.valid:
            return {"x": None, "y": None, "votes": 0, "valid": False}
        return {"x": self.x, "y": self.y, "votes": self.votes, "valid": True}


def check_gray(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D gray image, got shape {arr.shape}")
    if arr.shape[0] < 8 or arr.shape[1] < 8:
        raise ValueError(f"gray image must be at least 8x8, got {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("gray image values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def morphology_open(img, kernel_size: int = 5) -> np.ndarray:
    """Erosion then dilation with a square all-ones kernel, edges replicated."""
    if kernel_size < 3 or kernel_size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {kernel_size}")
    r = kernel_size // 2
    eroded = _window_reduce(np.asarray(img), r, np.minimum)
    return _window_reduce(eroded, r, np.maximum)


def _window_reduce(arr, r, op):
    # square windows are separable: one pass over rows, one over columns
    h, w = arr.shape
    p = np.pad(arr, ((r, r), (0, 0)), mode="edge")
    arr = op.reduce([p[i:i + h] for i in range(2 * r + 1)])
    p = np.pad(arr, ((0, 0), (r, r)), mode="edge")
    return op.reduce([p[:, i:i + w] for i in range(2 * r + 1)])


def sobel(img, aperture: int = 3):
    """Unnormalized x/y derivatives with replicated borders."""
    if aperture not in _SOBEL:
        raise ValueError(f"aperture must be one of 3, 5, 7, got {aperture}")
    smooth, deriv = _SOBEL[aperture]
    r = aperture // 2
    f = np.pad(np.asarray(img, dtype=np.int32), r, mode="edge")
    h, w = f.shape[0] - 2 * r, f.shape[1] - 2 * r

    def pass1d(a, taps, axis):
        out = None
        for i, t in enumerate(taps):
            if t == 0:
                continue
            sl = a[i:i + (a.shape[0] - 2 * r)] if axis == 0 else a[:, i:i + (a.shape[1] - 2 * r)]
            out = t * sl if out is None else out + t * sl
        return out

    gx = pass1d(pass1d(f, smooth, 0), deriv, 1)
    gy = pass1d(pass1d(f, smooth, 1), deriv, 0)
    assert gx.shape == (h, w)
    return gx, gy


def canny_edges(img, low: float = 50.0, high: float = 150.0, aperture: int = 3) -> np.ndarray:
    """Binary (0/255) Canny edge map restricted to rows >= floor(H/3).

    Gradient magnitude is the L1 norm |gx| + |gy|; suppression compares
    against the neighbour pair across the quantized gradient direction,
    strictly on the leading side so plateaus keep a single pixel.
    """
    if not 0 < low < high:
        raise ValueError(f"thresholds must satisfy 0 < low < high, got {low}, {high}")
    arr = check_gray(img)
    return _canny(arr, low, high, aperture, arr.shape[0] // 3)


def _canny(arr, low, high, aperture, top):
    gx, gy = sobel(arr, aperture)
    mag = np.abs(gx) + np.abs(gy)
    ax, ay = np.abs(gx), np.abs(gy)

    p = np.pad(mag, 1)
    center = p[1:-1, 1:-1]
    left, right = p[1:-1, :-2], p[1:-1, 2:]
    up, down = p[:-2, 1:-1], p[2:, 1:-1]
    up_left, down_right = p[:-2, :-2], p[2:, 2:]
    up_right, down_left = p[:-2, 2:], p[2:, :-2]

    horizontal = ay <= ax * _TAN_22_5
    vertical = ay > ax * _TAN_67_5
    diagonal = ~(horizontal | vertical)
    same_sign = (gx * gy) > 0

    keep = np.zeros(mag.shape, dtype=bool)
    keep |= horizontal & (center > left) & (center >= right)
    keep |= vertical & (center > up) & (center >= down)
    keep |= diagonal & same_sign & (center > up_left) & (center >= down_right)
    keep |= diagonal & ~same_sign & (center > up_right) & (center >= down_left)

    keep[:top] = False
    weak = keep & (mag > low)
    strong = keep & (mag > high)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(arr.shape, dtype=np.uint8)
    seeded = np.zeros(n + 1, dtype=bool)
    seeded[np.unique(labels[strong])] = True
    seeded[0] = False
    return np.where(seeded[labels], 255, 0).astype(np.uint8)


def hough_lines(edges, rho_res: float = 1.0, theta_res: float = math.pi / 180, threshold: int = 200):
    """Every (rho, theta) accumulator cell with at least ``threshold`` votes, most votes first."""
    arr = np.asarray(edges)
    ys, xs = np.nonzero(arr)
    if len(xs) == 0:
        return []
    h, w = arr.shape
    n_theta = int(round(math.pi / theta_res))
    thetas = np.arange(n_theta) * theta_res
    n_off = int(math.ceil(math.hypot(h, w) / rho_res))
    n_rho = 2 * n_off + 1
    rho = np.outer(np.cos(thetas), xs) + np.outer(np.sin(thetas), ys)
    rho_idx = np.rint(rho / rho_res).astype(np.int64) + n_off
    flat = rho_idx + (np.arange(n_theta)[:, None] * n_rho)
    acc = np.bincount(flat.ravel(), minlength=n_theta * n_rho)
    cells = np.nonzero(acc >= threshold)[0]
    order = np.lexsort((cells, -acc[cells]))
    lines = []
    for cell in cells[order]:
        t_idx, r_idx = divmod(int(cell), n_rho)
        lines.append(HoughLine(rho=(r_idx - n_off) * rho_res, theta=float(thetas[t_idx]), votes=int(acc[cell])))
    return lines


def line_distance(line: HoughLine, point) -> float:
    x, y = point
    return abs(x * math.cos(line.theta) + y * math.sin(line.theta) - line.rho)


def slope_ok(slope: float, intervals) -> bool:
    return any(lo < slope < hi for lo, hi in intervals)


def select_lines(lines, center, d_max=160.0, slope_intervals=((-5.0, -0.2), (0.2, 5.0)), max_lines=100, seed=0):
    """Drop lines far from ``center`` or with slopes outside the intervals, then subsample."""
    kept = [ln for ln in lines if line_distance(ln, center) <= d_max and slope_ok(ln.slope, slope_intervals)]
    if len(kept) > max_lines:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(kept), size=max_lines, replace=False))
        kept = [kept[i] for i in pick]
    return kept


def intersections(lines, shape=None) -> np.ndarray:
    """Pairwise intersections as an (n, 2) array of (x, y); parallel pairs are skipped.

    With ``shape=(H, W)`` points outside the box of twice the image size,
    centered on the image, are dropped.
    """
    if len(lines) < 2:
        return np.zeros((0, 2))
    theta = np.array([ln.theta for ln in lines])
    rho = np.array([ln.rho for ln in lines])
    i, j = np.triu_indices(len(lines), k=1)
    c1, s1, c2, s2 = np.cos(theta[i]), np.sin(theta[i]), np.cos(theta[j]), np.sin(theta[j])
    det = c1 * s2 - s1 * c2
    ok = np.abs(det) > 1e-9
    det, r1, r2 = det[ok], rho[i][ok], rho[j][ok]
    x = (r1 * s2[ok] - r2 * s1[ok]) / det
    y = (c1[ok] * r2 - c2[ok] * r1) / det
    pts = np.stack([x, y], axis=1)
    if shape is not None:
        h, w = shape
        inside = (pts[:, 0] >= -w / 2) & (pts[:, 0] <= 1.5 * w) & (pts[:, 1] >= -h / 2) & (pts[:, 1] <= 1.5 * h)
        pts = pts[inside]
    return pts


def cell_centers(h: int, w: int):
    """Row and column centers of the half-stride cell grid over the lower two thirds."""
    size = h // 4
    stride = max(size // 2, 1)
    return np.arange(h // 3, h, stride), np.arange(0, w, stride), size


def cell_counts(points, h: int, w: int):
    rows, cols, size = cell_centers(h, w)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    inside = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
    pts = pts[inside]
    half = size // 2
    in_row = (pts[None, :, 1] >= rows[:, None] - half) & (pts[None, :, 1] < rows[:, None] - half + size)
    in_col = (pts[None, :, 0] >= cols[:, None] - half) & (pts[None, :, 0] < cols[:, None] - half + size)
    counts = in_row.astype(np.int64) @ in_col.T.astype(np.int64)
    return counts, rows, cols


def cell_vote(points, h: int, w: int) -> VpEstimate:
    """Center of the L x L cell (L = H // 4) holding the most points.

    Ties go to the smaller center row, then the smaller column.
    """
    counts, rows, cols = cell_counts(points, h, w)
    if counts.size == 0 or counts.max() == 0:
        return VpEstimate.invalid()
    r, c = divmod(int(np.argmax(counts)), counts.shape[1])
    return VpEstimate(float(cols[c]), float(rows[r]), int(counts[r, c]), True)


def detect_vp(img, config: VpConfig = VpConfig()) -> VpEstimate:
    arr = check_gray(img)
    h, w = arr.shape
    if not 0 < config.canny_low < config.canny_high:
        raise ValueError(f"thresholds must satisfy 0 < low < high, got {config.canny_low}, {config.canny_high}")
    # rows above the lower two thirds never produce edges; skip them, keeping
    # enough margin that opening and Sobel see the same neighbourhoods
    r0 = max(h // 3 - config.kernel_size - config.aperture, 0)
    opened = morphology_open(arr[r0:], config.kernel_size)
    edges = np.zeros_like(arr)
    edges[r0:] = _canny(opened, config.canny_low, config.canny_high, config.aperture, h // 3 - r0)
    lines = hough_lines(edges, config.rho_res, config.theta_res, config.hough_threshold)
    lines = select_lines(lines, (w / 2, h / 2), config.d_max, config.slope_intervals, config.max_lines, config.seed)
    if len(lines) < 2:
        return VpEstimate.invalid()
    pts = intersections(lines, shape=(h, w))
    if len(pts) == 0:
        return VpEstimate.invalid()
    return cell_vote(pts, h, w)
