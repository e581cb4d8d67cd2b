"""Command-line entry point: ``vpguide <group> <command> ...``."""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from .imageio import read_json, read_pgm, to_u8, write_json, write_pgm
from .metrics import evaluate
from .motionvp import PatchGrid, assign_directions
from .pipeline import (PipelineConfig, init_params, load_params, run_pipeline, save_params,
                       train_synthetic)
from .proximity import VARIANTS, proximity_map
from .synthetic import CLASS_NAMES, generate_scene_sequence, random_scene_spec
from .tensor import Tensor
from .vpdetect import VpConfig, detect_vp


def _point(text):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None
    return x, y


def cmd_vp_detect(args):
    cfg = VpConfig.from_dict(read_json(args.config)) if args.config else VpConfig()
    if args.seed is not None:
        cfg = VpConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    img = read_pgm(args.image)
    t0 = time.perf_counter()
    est = detect_vp(img, cfg)
    elapsed = time.perf_counter() - t0
    report = {"image": Path(args.image).name, "vp": est.to_dict(), "config": cfg.to_dict()}
    if args.json:
        write_json(args.json, report)
    if est.valid:
        print(f"vp = ({est.x:.1f}, {est.y:.1f})  votes {est.votes}  [{elapsed * 1000:.1f} ms]")
    else:
        print(f"no vanishing point found  [{elapsed * 1000:.1f} ms]")
    return 0


def cmd_vp_proximity(args):
    img = read_pgm(args.image)
    h, w = img.shape
    pmap = proximity_map(args.vp, h, w, args.variant)
    pmap.to_tensor().save(args.output)
    if args.pgm:
        write_pgm(args.pgm, to_u8(pmap.values))
    print(f"{args.variant} proximity map {w}x{h} -> {args.output}")
    return 0


def cmd_motion_directions(args):
    feats = Tensor.load(args.features).numpy()
    if feats.ndim != 3:
        raise SystemExit(f"expected a c x h x w feature tensor, got shape {feats.shape}")
    _, h, w = feats.shape
    grid = PatchGrid(h, w, args.patch_size)
    dirs = assign_directions(grid, args.vp)
    with open(args.output, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["row", "col", "u", "v"])
        for row in range(grid.gh):
            for col in range(grid.gw):
                out.writerow([row, col, int(dirs[row, col, 0]), int(dirs[row, col, 1])])
    print(f"{grid.gh}x{grid.gw} patch directions -> {args.output}")
    return 0


def cmd_pipeline_run(args):
    if args.params:
        params, config = load_params(args.params)
        if args.config:
            print("note: --config ignored, using the configuration stored with --params", file=sys.stderr)
    else:
        config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        params = init_params(config)
    frames = [read_pgm(p) for p in args.frames.split(",")]
    res = run_pipeline(frames, config, params)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("P_c", "P_d", "P_f", "O"):
        getattr(res, name).save(out / f"{name}.ctnsr")
    res.F_dyn.save(out / "F_dyn.ctnsr")
    res.F_aug.save(out / "F_aug.ctnsr")
    gate = res.O.numpy()
    for k in range(gate.shape[0]):
        write_pgm(out / f"O_{k}.pgm", to_u8(gate[k]))
    write_pgm(out / "pred.pgm", res.prediction())
    write_json(out / "vp.json", {
        "frames": [Path(p).name for p in args.frames.split(",")],
        "vps": [vp.to_dict() for vp in res.vps],
        "region": res.region.to_dict(),
        "config": config.to_dict(),
    })
    print(f"fused prediction {res.P_f.shape} -> {out}")
    return 0


def cmd_pipeline_train(args):
    if not args.synthetic:
        raise SystemExit("only --synthetic training is available")
    lr = {} if args.lr is None else {"lr": args.lr}
    res, config = train_synthetic(args.seed, args.steps, log=print, **lr)
    summary = {
        "steps": args.steps,
        "seed": args.seed,
        "loss": res.losses,
        "loss_smoothed": res.smoothed,
        "loss_reduction": res.reduction,
        "heldout_iou": res.heldout_iou,
        "heldout_miou": res.heldout_miou,
    }
    save_params(res.params, config, args.output, extra={"training": summary})
    print(f"loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f} ({res.reduction:.1%} lower); "
          f"held-out mIoU {res.heldout_miou:.3f}")
    return 0


def _load_raster(path):
    return Tensor.load(path).numpy() if str(path).endswith(".ctnsr") else read_pgm(path)


def cmd_metrics_eval(args):
    pred = _load_raster(args.pred)
    if pred.ndim == 3:
        num_classes = pred.shape[0]
        pred = np.argmax(pred, axis=0)
    else:
        num_classes = args.num_classes
    gt = read_pgm(args.gt)
    masks = [read_pgm(args.invalid_mask)] if args.invalid_mask else None
    insts = [read_pgm(args.instances)] if args.instances else None
    names = args.class_names.split(",") if args.class_names else None
    if names is None and num_classes == len(CLASS_NAMES):
        names = list(CLASS_NAMES)
    report = evaluate([pred], [gt], num_classes, instances=insts, masks=masks, class_names=names)
    out = report.to_dict()
    if args.json:
        write_json(args.json, out)
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"  # noqa: E731
    print(f"mIoU {fmt(out['miou'])}  miIoU {fmt(out['miiou'])}  mIA-IoU {fmt(out['mia_iou'])}")
    return 0


def cmd_synth_generate(args):
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).spawn(args.scenes)
    for i, child in enumerate(seeds):
        scene_seed = int(child.generate_state(1)[0])
        spec = random_scene_spec(scene_seed, args.height, args.width, n_frames=args.frames, noise=args.noise)
        seq = generate_scene_sequence(spec)
        sdir = out / f"scene_{i:03d}"
        sdir.mkdir(exist_ok=True)
        for f in range(spec.n_frames):
            write_pgm(sdir / f"frame_{f}.pgm", seq.frames[f])
            write_pgm(sdir / f"label_{f}.pgm", seq.labels[f])
            write_pgm(sdir / f"instance_{f}.pgm", seq.instances[f])
            write_pgm(sdir / f"mask_{f}.pgm", seq.masks[f])
        write_json(sdir / "scene.json", {
            "spec": spec.to_dict(),
            "vp": list(spec.vp),
            "classes": list(CLASS_NAMES),
            "object_centers": seq.object_centers.tolist(),
        })
    print(f"{args.scenes} scene(s) -> {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="vpguide", description="VP-guided video segmentation toolkit")
    groups = parser.add_subparsers(dest="group", required=True)

    vp = groups.add_parser("vp", help="vanishing-point detection and proximity maps").add_subparsers(
        dest="command", required=True)
    p = vp.add_parser("detect", help="detect the VP in a grayscale PGM")
    p.add_argument("image")
    p.add_argument("--seed", type=int, default=None, help="seed for the line subsample")
    p.add_argument("--config", help="JSON file overriding detector parameters")
    p.add_argument("--json", help="write the estimate and config here")
    p.set_defaults(func=cmd_vp_detect)
    p = vp.add_parser("proximity", help="render a VP proximity map")
    p.add_argument("image", help="PGM whose size fixes the map extent")
    p.add_argument("--vp", type=_point, required=True, metavar="X,Y")
    p.add_argument("--variant", choices=VARIANTS, default="linear")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--pgm", help="also write an 8-bit render")
    p.set_defaults(func=cmd_vp_proximity)

    motion = groups.add_parser("motion", help="MotionVP inspection").add_subparsers(dest="command", required=True)
    p = motion.add_parser("directions", help="dump per-patch assigned directions as CSV")
    p.add_argument("--features", required=True, help="c x h x w feature tensor")
    p.add_argument("--vp", type=_point, required=True, metavar="X,Y", help="VP in patch-grid coordinates")
    p.add_argument("--patch-size", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_motion_directions)

    pipe = groups.add_parser("pipeline", help="full pipeline").add_subparsers(dest="command", required=True)
    p = pipe.add_parser("run", help="run on a frame sequence, oldest first, target last")
    p.add_argument("--frames", required=True, help="comma-separated PGM paths")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--params", help="directory written by 'pipeline train'")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_pipeline_run)
    p = pipe.add_parser("train", help="toy gradient-descent training")
    p.add_argument("--synthetic", action="store_true", help="train on generated scenes")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_pipeline_train)

    met = groups.add_parser("metrics", help="segmentation metrics").add_subparsers(dest="command", required=True)
    p = met.add_parser("eval", help="IoU, iIoU and IA-IoU for one prediction")
    p.add_argument("--pred", required=True, help="K x H x W logits (.ctnsr) or a label PGM")
    p.add_argument("--gt", required=True)
    p.add_argument("--invalid-mask")
    p.add_argument("--instances")
    p.add_argument("--num-classes", type=int, default=4, help="used when --pred is a label map")
    p.add_argument("--class-names", help="comma-separated names")
    p.add_argument("--json")
    p.set_defaults(func=cmd_metrics_eval)

    syn = groups.add_parser("synth", help="synthetic scenes").add_subparsers(dest="command", required=True)
    p = syn.add_parser("generate", help="write seeded corridor sequences")
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth_generate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
