"""One-point-perspective corridor scenes with analytic ground truth.

Lane boundaries are rays leaving the vanishing point at whole-degree angles
(so a 1-degree Hough grid can represent them exactly). Objects are
rectangles that drift radially away from the VP and grow by the same factor
every frame.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

SKY, ROAD, ROADSIDE, VEHICLE = 0, 1, 2, 3
CLASS_NAMES = ("sky", "road", "roadside", "vehicle")

_INTENSITY = {SKY: 200, ROAD: 90, ROADSIDE: 150}
_STRIPE = 235


@dataclass(frozen=True)
class SceneObject:
    instance_id: int
    center: tuple[float, float]
    size: tuple[float, float]
    growth: float = 0.08
    class_id: int = VEHICLE
    intensity: int = 35


@dataclass(frozen=True)
class SceneSpec:
    height: int = 512
    width: int = 1024
    vp: tuple[float, float] = (512.0, 240.0)
    # ray directions below the horizon, degrees from +x (0..180, rows grow downward);
    # the extreme two bound the road, any others are painted stripes
    lane_angles: tuple[int, ...] = (140, 40)
    objects: tuple[SceneObject, ...] = ()
    n_frames: int = 4
    # fraction of pixels hit by impulse noise, and the share of hits that are dark
    noise: float = 0.0
    pepper_fraction: float = 0.5
    texture: float = 2.0
    stripe_width: float = 8.0
    invalid_radius: float = 40.0
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class SceneSequence:
    spec: SceneSpec
    frames: np.ndarray
    labels: np.ndarray
    instances: np.ndarray
    masks: np.ndarray
    object_centers: np.ndarray = field(repr=False)

    @property
    def vp(self):
        return self.spec.vp


def object_center(obj: SceneObject, vp, frame: int):
    """Exact center after ``frame`` steps of radial growth."""
    f = (1.0 + obj.growth) ** frame
    return (vp[0] + (obj.center[0] - vp[0]) * f, vp[1] + (obj.center[1] - vp[1]) * f)


def _background(spec: SceneSpec):
    h, w = spec.height, spec.width
    vx, vy = spec.vp
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    angle = np.degrees(np.arctan2(ys - vy, xs - vx))
    below = ys > vy
    lo, hi = min(spec.lane_angles), max(spec.lane_angles)
    road = below & (angle >= lo) & (angle <= hi)
    labels = np.full((h, w), SKY, dtype=np.uint8)
    labels[below] = ROADSIDE
    labels[road] = ROAD
    img = np.zeros((h, w), dtype=np.float64)
    for cls, value in _INTENSITY.items():
        img[labels == cls] = value
    for phi in spec.lane_angles:
        if phi in (lo, hi):
            continue
        t = math.radians(phi)
        dist = np.abs((xs - vx) * math.sin(t) - (ys - vy) * math.cos(t))
        img[below & (dist < spec.stripe_width / 2)] = _STRIPE
    return img, labels


def generate_scene_sequence(spec: SceneSpec) -> SceneSequence:
    if len(spec.lane_angles) < 2:
        raise ValueError("a scene needs at least two lane lines")
    if not (0 <= spec.vp[0] < spec.width and 0 <= spec.vp[1] < spec.height):
        raise ValueError(f"VP {spec.vp} lies outside the {spec.width}x{spec.height} frame")
    if any(not 0 < a < 180 for a in spec.lane_angles):
        raise ValueError("lane angles must lie strictly between 0 and 180 degrees")
    if spec.n_frames < 1 or not 0 <= spec.noise <= 1:
        raise ValueError("need n_frames >= 1 and noise in [0, 1]")
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    base_img, base_labels = _background(spec)
    ys, xs = np.mgrid[0:h, 0:w]
    disc = (xs - spec.vp[0]) ** 2 + (ys - spec.vp[1]) ** 2 <= spec.invalid_radius**2

    frames = np.zeros((spec.n_frames, h, w), dtype=np.uint8)
    labels = np.zeros((spec.n_frames, h, w), dtype=np.uint8)
    instances = np.zeros((spec.n_frames, h, w), dtype=np.uint16)
    masks = np.broadcast_to(disc.astype(np.uint8), (spec.n_frames, h, w)).copy()
    centers = np.zeros((spec.n_frames, len(spec.objects), 2))

    for f in range(spec.n_frames):
        img = base_img.copy()
        lab = base_labels.copy()
        inst = np.zeros((h, w), dtype=np.uint16)
        for n, obj in enumerate(spec.objects):
            cx, cy = object_center(obj, spec.vp, f)
            centers[f, n] = (cx, cy)
            g = (1.0 + obj.growth) ** f
            ow, oh = obj.size[0] * g, obj.size[1] * g
            x0, x1 = max(int(round(cx - ow / 2)), 0), min(int(round(cx + ow / 2)), w)
            y0, y1 = max(int(round(cy - oh / 2)), 0), min(int(round(cy + oh / 2)), h)
            if x0 >= x1 or y0 >= y1:
                continue
            img[y0:y1, x0:x1] = obj.intensity
            lab[y0:y1, x0:x1] = obj.class_id
            inst[y0:y1, x0:x1] = obj.instance_id
        if spec.texture > 0:
            img = img + rng.normal(0.0, spec.texture, size=img.shape)
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        if spec.noise > 0:
            hit = rng.random((h, w)) < spec.noise
            salt = rng.random((h, w)) >= spec.pepper_fraction
            img[hit & salt] = 255
            img[hit & ~salt] = 0
        frames[f], labels[f], instances[f] = img, lab, inst
    return SceneSequence(spec, frames, labels, instances, masks, centers)


def random_scene_spec(seed: int, height=512, width=1024, n_frames=4, noise=0.0, n_objects=2,
                      pepper_fraction=0.5) -> SceneSpec:
    """A randomized corridor with its VP near the image center, below the upper third."""
    rng = np.random.default_rng(seed)
    vx = width / 2 + rng.uniform(-0.08, 0.08) * width
    vy = rng.uniform(0.42, 0.52) * height
    # shallow boundaries: a 1-px edge run needs ~2x the Hough threshold because
    # rho rounding splits its votes over two accumulator cells
    left = int(rng.integers(148, 166))
    right = int(rng.integers(15, 33))
    angles = [left, right]
    if rng.random() < 0.5:
        angles.append(int(rng.integers(right + 20, left - 19)))
    objects = []
    for n in range(n_objects):
        # start on a ray toward the lower part of the road
        phi = math.radians(rng.uniform(right + 10, left - 10))
        r = rng.uniform(0.15, 0.3) * height
        cx, cy = vx + r * math.cos(phi), vy + r * math.sin(phi)
        size = rng.uniform(0.06, 0.12) * height
        objects.append(SceneObject(instance_id=n + 1, center=(cx, cy), size=(size * 1.4, size),
                                   growth=float(rng.uniform(0.04, 0.1))))
    return SceneSpec(height=height, width=width, vp=(float(vx), float(vy)), lane_angles=tuple(angles),
                     objects=tuple(objects), n_frames=n_frames, noise=noise, pepper_fraction=pepper_fraction,
                     invalid_radius=0.08 * height, seed=seed)
