"""Random 16x16 evaluation fixtures and pixel-loop metric oracles."""

import math
from fractions import Fraction

import numpy as np

K = 4
IGN = 255


def make_fixture(seed, n_images=3, size=16):
    rng = np.random.default_rng(seed)
    preds, gts, insts, masks = [], [], [], []
    for _ in range(n_images):
        gt = rng.integers(0, 3, size=(size, size))
        inst = np.zeros((size, size), dtype=np.int64)
        for n in range(1, rng.integers(0, 4) + 1):
            y, x = rng.integers(0, size - 2, 2)
            hh, ww = rng.integers(1, 6, 2)
            gt[y:y + hh, x:x + ww] = 3
            inst[y:y + hh, x:x + ww] = n
        if rng.random() < 0.5:  # vehicle pixels outside any instance
            gt[0, :3] = 3
            inst[0, :3] = 0
        gt[rng.random((size, size)) < 0.05] = IGN
        inst[gt == IGN] = 0
        # drop instance ids that lost all their pixels or were overwritten by another class
        for n in np.unique(inst[inst > 0]):
            if np.any(gt[inst == n] != 3):
                inst[(inst == n) & (gt != 3)] = 0
        pred = np.where(rng.random((size, size)) < 0.7, gt, rng.integers(0, K, size=(size, size)))
        pred[pred == IGN] = 0
        preds.append(pred)
        gts.append(gt)
        insts.append(inst)
        masks.append((rng.random((size, size)) < 0.3).astype(np.uint8))
    return preds, gts, insts, masks


def _mean(values):
    defined = [v for v in values if v is not None]
    return math.fsum(defined) / len(defined) if defined else None


def loop_iou(preds, gts):
    tp, fp, fn = [0] * K, [0] * K, [0] * K
    for p, g in zip(preds, gts):
        for y in range(g.shape[0]):
            for x in range(g.shape[1]):
                gv, pv = int(g[y, x]), int(p[y, x])
                if gv == IGN:
                    continue
                if gv == pv:
                    tp[gv] += 1
                else:
                    fn[gv] += 1
                    fp[pv] += 1
    out = [tp[z] / (tp[z] + fp[z] + fn[z]) if tp[z] + fp[z] + fn[z] else None for z in range(K)]
    return out, _mean(out)


def loop_iiou(preds, gts, insts):
    sizes = {}  # (image, id) -> [class, area]
    for i, (g, inst) in enumerate(zip(gts, insts)):
        for y in range(g.shape[0]):
            for x in range(g.shape[1]):
                n = int(inst[y, x])
                if n:
                    entry = sizes.setdefault((i, n), [int(g[y, x]), 0])
                    entry[1] += 1
    per_class = {}
    for z, area in sizes.values():
        per_class.setdefault(z, []).append(area)
    mean = {z: Fraction(sum(a), len(a)) for z, a in per_class.items()}
    itp = [Fraction(0)] * K
    ifn = [Fraction(0)] * K
    fp = [0] * K
    for i, (p, g, inst) in enumerate(zip(preds, gts, insts)):
        for y in range(g.shape[0]):
            for x in range(g.shape[1]):
                gv, pv, n = int(g[y, x]), int(p[y, x]), int(inst[y, x])
                if gv == IGN:
                    continue
                w = mean[gv] / sizes[(i, n)][1] if n else Fraction(1)
                if gv == pv:
                    itp[gv] += w
                else:
                    ifn[gv] += w
                    fp[pv] += 1
    out = [float(itp[z] / (itp[z] + ifn[z] + fp[z])) if z in mean else None for z in range(K)]
    return out, _mean(out)


def loop_ia_iou(preds, gts, masks):
    inter, union = [0] * K, [0] * K
    for p, g, m in zip(preds, gts, masks):
        for y in range(g.shape[0]):
            for x in range(g.shape[1]):
                gv, pv = int(g[y, x]), int(p[y, x])
                if not m[y, x] or gv == IGN:
                    continue
                for z in range(K):
                    a, b = pv == z, gv == z
                    inter[z] += a and b
                    union[z] += a or b
    out = [inter[z] / union[z] if union[z] else None for z in range(K)]
    return out, _mean(out)
