"""Context-detail orchestration around a deterministic stub backbone.

Frames go through VP detection, a downsampled context branch and a
full-resolution detail branch. The context features feed MotionVP, DenseVP
and the attention stack; the detail attention map O blends the two branch
predictions. :func:`train_toy` fits the learnable parts with plain gradient
descent to show the whole stack is differentiable end to end.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import cma
from .densevp import augment_context_var, dense_indices, vp_patch, vp_region
from .metrics import confusion_matrix, miou
from .motionvp import PatchGrid, dynamic_context_var, patch_vp_or_center
from .proximity import VARIANTS, proximity_map
from .tensor import Tensor, bilinear_resize
from .vpdetect import VpConfig, detect_vp


@dataclass(frozen=True)
class PipelineConfig:
    downsample_ratio: float = 0.5
    patch_size: int = 4  # s, in context-feature cells
    k: int = 3
    delta_d: int = 1
    a: int = 1
    b: int = 1
    n_layers: int = 2
    detail_weight: float = 0.1
    num_classes: int = 4
    channels: int = 16
    backbone_patch: int = 8  # P
    backbone_seed: int = 0
    param_seed: int = 0
    variant: str = "linear"
    use_motionvp: bool = True
    use_densevp: bool = True
    vp: dict = field(default_factory=dict)  # overrides for VpConfig

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown proximity variant {self.variant!r}")
        if not 0 < self.downsample_ratio <= 1:
            raise ValueError(f"downsample ratio must lie in (0, 1], got {self.downsample_ratio}")
        for name in ("patch_size", "k", "delta_d", "num_classes", "channels", "backbone_patch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if min(self.a, self.b, self.n_layers) < 0:
            raise ValueError("a, b and n_layers must be >= 0")
        if not 0 <= self.detail_weight <= 1:
            raise ValueError(f"detail_weight must lie in [0, 1], got {self.detail_weight}")
        self.vp_config()  # reject bad VP overrides early

    def vp_config(self) -> VpConfig:
        return VpConfig.from_dict(self.vp)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------- backbone


@dataclass(frozen=True)
class StubBackbone:
    weights: np.ndarray  # c x P^2
    patch: int

    @classmethod
    def create(cls, channels: int, patch: int = 8, seed: int = 0):
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, 1.0 / patch, size=(channels, patch * patch))
        return cls(w, patch)

    @property
    def channels(self):
        return self.weights.shape[0]


def stub_features(frame, backbone: StubBackbone) -> Tensor:
    """Per-patch linear projection of ``pixel / 255 - 0.5``."""
    img = np.asarray(frame, dtype=np.float64)
    p = backbone.patch
    if img.ndim != 2 or img.shape[0] < p or img.shape[1] < p or img.shape[0] % p or img.shape[1] % p:
        raise ValueError(f"frame of shape {img.shape} cannot be split into {p}x{p} patches")
    h, w = img.shape[0] // p, img.shape[1] // p
    patches = (img / 255.0 - 0.5).reshape(h, p, w, p).transpose(1, 3, 0, 2).reshape(p * p, h * w)
    return Tensor((backbone.weights @ patches).reshape(-1, h, w))


def stub_decode(features, head_w, head_b, out_h: int, out_w: int) -> Tensor:
    """1x1 projection c -> K followed by a bilinear resize to out_h x out_w."""
    f = np.asarray(features, dtype=np.float64)
    c, h, w = f.shape
    logits = np.asarray(head_w, np.float64) @ f.reshape(c, h * w) + np.asarray(head_b, np.float64)[:, None]
    return bilinear_resize(logits.reshape(-1, h, w), out_h, out_w)


def _decode_var(features, head_w, head_b, out_h, out_w):
    f = ag.as_var(features)
    c, h, w = f.shape
    logits = ag.add(ag.matmul(head_w, ag.reshape(f, (c, h * w))), ag.reshape(head_b, (-1, 1)))
    return cma.upsample_var(ag.reshape(logits, (-1, h, w)), out_h, out_w)


# -------------------------------------------------------------- parameters

_TRIPLES = ("motion", "dense", "context")


def init_params(config: PipelineConfig) -> dict:
    """Learnable parameters keyed by name, all float64."""
    rng = np.random.default_rng(config.param_seed)
    c, k = config.channels, config.num_classes

    def proj():
        return rng.normal(0.0, 1.0 / math.sqrt(c), size=(c, c))

    params = {"Q": rng.normal(0.0, 1.0, size=(c, k))}
    for name in _TRIPLES:
        for part in ("wq", "wk", "wv"):
            params[f"{name}.{part}"] = proj()
    for n in range(config.n_layers):
        for part in ("wq", "wk", "wv"):
            params[f"layer{n}.{part}"] = proj()
    for head in ("head_c", "head_d"):
        params[f"{head}.w"] = rng.normal(0.0, 1.0 / math.sqrt(c), size=(k, c))
        params[f"{head}.b"] = np.zeros(k)
    return params


def save_params(params: dict, config: PipelineConfig, outdir, extra=None):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": config.to_dict(), "params": {}}
    for name in sorted(params):
        fname = f"{name}.ctnsr"
        Tensor(params[name]).save(out / fname)
        manifest["params"][name] = {"file": fname, "shape": list(np.shape(params[name]))}
    if extra:
        manifest.update(extra)
    with open(out / "params.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(indir):
    base = Path(indir)
    with open(base / "params.json") as fh:
        manifest = json.load(fh)
    config = PipelineConfig.from_dict(manifest["config"])
    params = {}
    for name, entry in manifest["params"].items():
        arr = Tensor.load(base / entry["file"]).numpy().astype(np.float64)
        if list(arr.shape) != entry["shape"]:
            raise ValueError(f"parameter {name} has shape {arr.shape}, manifest says {entry['shape']}")
        params[name] = arr
    return params, config


# ----------------------------------------------------------------- forward


@dataclass
class PreparedSequence:
    """Everything about a frame sequence that does not depend on learnable parameters."""

    frame_hw: tuple
    context: list  # c x h x w arrays, oldest to newest
    detail: np.ndarray  # c x H/P x W/P for the target frame
    vps: list  # VpEstimate per frame
    patch_vps: list  # continuous patch-grid VPs
    bias: np.ndarray  # flattened E at context-feature resolution
    dense_idx: np.ndarray
    region: object


def _downsample(frame, ratio):
    big_h, big_w = frame.shape
    h, w = int(round(big_h * ratio)), int(round(big_w * ratio))
    if (h, w) == (big_h, big_w):
        return frame.astype(np.float64)
    return np.asarray(bilinear_resize(frame[None].astype(np.float32), h, w))[0].astype(np.float64)


def prepare_sequence(frames, config: PipelineConfig, backbone: StubBackbone | None = None) -> PreparedSequence:
    frames = [np.asarray(f) for f in frames]
    if len(frames) < 2:
        raise ValueError("the pipeline needs the target frame and at least one earlier frame")
    if len({f.shape for f in frames}) != 1:
        raise ValueError(f"frames have mismatched sizes: {sorted({f.shape for f in frames})}")
    if backbone is None:
        backbone = StubBackbone.create(config.channels, config.backbone_patch, config.backbone_seed)
    big_h, big_w = frames[0].shape
    vcfg = config.vp_config()
    vps = [detect_vp(f, vcfg) for f in frames]
    context = [np.asarray(stub_features(_downsample(f, config.downsample_ratio), backbone), np.float64)
               for f in frames]
    _, h, w = context[0].shape
    s = config.patch_size
    grid = PatchGrid(h, w, s)
    patch_vps = [patch_vp_or_center(vp, (big_h, big_w), (h, w), s) for vp in vps]
    target = vps[-1]
    pixel_vp = (target.x, target.y) if target.valid else ((big_w - 1) / 2, (big_h - 1) / 2)
    bias = proximity_map(pixel_vp, big_h, big_w, config.variant).resized(h, w).astype(np.float64).ravel()
    region = vp_region(vp_patch(patch_vps[-1], grid), config.a, config.b, grid)
    detail = np.asarray(stub_features(frames[-1], backbone), np.float64)
    return PreparedSequence((big_h, big_w), context, detail, vps, patch_vps, bias,
                            dense_indices(region, grid), region)


def _triple(params, name):
    return [params[f"{name}.{p}"] for p in ("wq", "wk", "wv")]


def forward(params, prep: PreparedSequence, config: PipelineConfig) -> dict:
    """Forward pass over Vars (or arrays); returns every intermediate."""
    c, h, w = prep.context[-1].shape
    big_h, big_w = prep.frame_hw
    local = ag.reshape(ag.as_var(prep.context[-1]), (c, h * w))
    if config.use_motionvp:
        dyn = dynamic_context_var(prep.context, prep.patch_vps, _triple(params, "motion"),
                                  config.patch_size, config.k, config.delta_d)
    else:
        dyn = local
    if config.use_densevp:
        dense = ag.take_cols(dyn, prep.dense_idx)
        aug = augment_context_var(dyn, dense, _triple(params, "dense"))
    else:
        aug = dyn
    q_c = cma.contextualize_queries_var(params["Q"], local, prep.bias, _triple(params, "context"))
    layers = [_triple(params, f"layer{n}") for n in range(config.n_layers)]
    f_m = cma.motion_attention_var(q_c, aug, prep.bias, layers)
    o_raw, o = cma.detail_attention_var(f_m, local)
    k = config.num_classes
    o = ag.reshape(o, (k, h, w))
    p_c = _decode_var(prep.context[-1], params["head_c.w"], params["head_c.b"], big_h, big_w)
    p_d = _decode_var(prep.detail, params["head_d.w"], params["head_d.b"], big_h, big_w)
    p_f = cma.fuse_predictions_var(p_c, p_d, o)
    return {"P_c": p_c, "P_d": p_d, "P_f": p_f, "O": o, "O_raw": ag.reshape(o_raw, (k, h, w)),
            "F_dyn": ag.reshape(ag.as_var(dyn), (c, h, w)), "F_aug": ag.reshape(ag.as_var(aug), (c, h, w))}


@dataclass
class PipelineResult:
    P_c: Tensor
    P_d: Tensor
    P_f: Tensor
    O: Tensor
    vps: list
    F_dyn: Tensor  # F'_t
    F_aug: Tensor  # F''_t
    region: object

    def prediction(self) -> np.ndarray:
        return np.argmax(self.P_f.numpy(), axis=0).astype(np.uint8)


def run_pipeline(frames, config: PipelineConfig | None = None, params=None) -> PipelineResult:
    config = config or PipelineConfig()
    params = params if params is not None else init_params(config)
    prep = prepare_sequence(frames, config)
    out = forward(params, prep, config)
    t = {name: Tensor(ag.as_var(v).value) for name, v in out.items()}
    return PipelineResult(t["P_c"], t["P_d"], t["P_f"], t["O"], prep.vps, t["F_dyn"], t["F_aug"], prep.region)


# ---------------------------------------------------------------- training


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainResult:
    params: dict
    losses: list
    smoothed: list  # running minimum of the raw curve
    heldout_miou: float | None = None
    heldout_iou: list = field(default_factory=list)

    @property
    def reduction(self):
        return 1.0 - self.losses[-1] / self.losses[0]


def sequence_loss(params, prep, labels, config):
    out = forward(params, prep, config)
    return cma.total_loss_var(out["P_f"], out["P_d"], np.asarray(labels), config.detail_weight)


def evaluate_params(params, preps, labels, config):
    preds = [np.argmax(ag.as_var(forward(params, p, config)["P_f"]).value, axis=0) for p in preps]
    return miou(confusion_matrix(preds, [np.asarray(g) for g in labels], config.num_classes))


def train_toy(dataset, config: PipelineConfig, steps: int, lr: float, heldout=None, params=None,
              log=None) -> TrainResult:
    """Full-batch gradient descent on the mean loss over ``dataset``.

    ``dataset`` and ``heldout`` are sequences of (frames, target labels).
    The backbone stays fixed, so per-sequence features are computed once.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not dataset:
        raise ValueError("empty training set")
    params = {k: np.array(v, dtype=np.float64) for k, v in (params or init_params(config)).items()}
    backbone = StubBackbone.create(config.channels, config.backbone_patch, config.backbone_seed)
    preps = [prepare_sequence(frames, config, backbone) for frames, _ in dataset]
    labels = [np.asarray(lab) for _, lab in dataset]
    names = sorted(params)
    losses = []

    def step_loss(update):
        leaves = {n: ag.Var(params[n], requires_grad=True) for n in names}
        try:
            with ag.Tape() as tape, np.errstate(over="ignore", invalid="ignore"):
                terms = [sequence_loss(leaves, p, lab, config) for p, lab in zip(preps, labels)]
                loss = terms[0]
                for term in terms[1:]:
                    loss = ag.add(loss, term)
                loss = ag.scale(loss, 1.0 / len(terms))
                if update:
                    tape.backward(loss)
        except FloatingPointError as exc:
            raise DivergenceError(f"non-finite values after {len(losses)} steps ({exc}); "
                                  "lower the learning rate") from None
        value = float(loss.value)
        if not math.isfinite(value):
            raise DivergenceError(f"loss became {value} after {len(losses)} steps; lower the learning rate")
        if update:
            for n in names:
                g = leaves[n].grad
                if g is not None:
                    params[n] = params[n] - lr * g
        return value

    for i in range(steps):
        losses.append(step_loss(update=True))
        if log is not None and (i % 50 == 0 or i == steps - 1):
            log(f"step {i:4d}  loss {losses[-1]:.6f}")
    losses.append(step_loss(update=False))
    smoothed = np.minimum.accumulate(losses).tolist()
    result = TrainResult(params, losses, smoothed)
    if heldout:
        hprep = [prepare_sequence(frames, config, backbone) for frames, _ in heldout]
        result.heldout_iou, result.heldout_miou = evaluate_params(params, hprep, [g for _, g in heldout], config)
    return result


# Synthetic training fixture: small frames so 500 steps stay well under a minute.
TOY_HEIGHT, TOY_WIDTH = 256, 512
TOY_VP = {"hough_threshold": 100, "d_max": 80.0}
TOY_TRAIN_SCENES = 4
TOY_HELDOUT_SCENES = 2
TOY_LR = 4.0


def toy_config(**overrides) -> PipelineConfig:
    base = {"vp": dict(TOY_VP)}
    base.update(overrides)
    return PipelineConfig(**base)


def synthetic_dataset(seed: int, count: int, height=TOY_HEIGHT, width=TOY_WIDTH, n_frames=4):
    from .synthetic import generate_scene_sequence, random_scene_spec

    ss = np.random.SeedSequence(seed)
    out = []
    for child in ss.spawn(count):
        scene_seed = int(child.generate_state(1)[0])
        seq = generate_scene_sequence(random_scene_spec(scene_seed, height, width, n_frames=n_frames))
        out.append((list(seq.frames), seq.labels[-1]))
    return out


def train_synthetic(seed: int, steps: int, lr: float = TOY_LR, config: PipelineConfig | None = None, log=None):
    """Train on seeded synthetic scenes and score on disjoint held-out scenes."""
    config = config or toy_config(param_seed=seed)
    train = synthetic_dataset(seed, TOY_TRAIN_SCENES)
    heldout = synthetic_dataset(seed + 1_000_003, TOY_HELDOUT_SCENES)
    return train_toy(train, config, steps, lr, heldout=heldout, log=log), config
