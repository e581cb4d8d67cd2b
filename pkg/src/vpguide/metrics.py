"""Segmentation metrics: IoU, instance-weighted iIoU and invalid-area IA-IoU."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

IGNORE = 255


def _pair(pred, gt):
    p, g = np.asarray(pred), np.asarray(gt)
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in size")
    return p, g


def _as_list(x):
    if isinstance(x, (list, tuple)):
        return list(x)
    arr = np.asarray(x)
    return [arr] if arr.ndim == 2 else list(arr)


def confusion_accumulate(pred, gt, acc, ignore_index=IGNORE):
    """Add one image to a K x K (gt row, pred column) count matrix in place."""
    p, g = _pair(pred, gt)
    k = acc.shape[0]
    keep = g != ignore_index
    p, g = p[keep].astype(np.int64), g[keep].astype(np.int64)
    if g.size and (g.max() >= k or p.min() < 0 or p.max() >= k or g.min() < 0):
        raise ValueError(f"labels outside [0, {k})")
    acc += np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    return acc


def confusion_matrix(preds, gts, num_classes, ignore_index=IGNORE):
    acc = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, g in zip(_as_list(preds), _as_list(gts)):
        confusion_accumulate(p, g, acc, ignore_index)
    return acc


def _mean(values):
    defined = [v for v in values if v is not None]
    return math.fsum(defined) / len(defined) if defined else None


def miou(acc):
    """Per-class IoU (None where TP+FN+FP is zero) and their mean."""
    tp = np.diag(acc)
    denom = acc.sum(axis=0) + acc.sum(axis=1) - tp
    ious = [float(t / d) if d > 0 else None for t, d in zip(tp, denom)]
    return ious, _mean(ious)


def iiou(preds, gts, instances, num_classes, ignore_index=IGNORE):
    """Instance-weighted IoU per class.

    A ground-truth pixel of instance n counts with weight
    (mean instance size of its class) / size(n) in TP and FN; pixels outside
    any instance count with weight 1 and false positives are unweighted.
    Only classes with at least one ground-truth instance are defined.
    Sums are kept as exact fractions so the result does not depend on
    summation order.
    """
    preds, gts, insts = _as_list(preds), _as_list(gts), _as_list(instances)
    n_inst = [0] * num_classes
    area_sum = [0] * num_classes
    tp_frac = [Fraction(0)] * num_classes  # sum over instances of tp_n / area_n
    fn_frac = [Fraction(0)] * num_classes
    tp0 = np.zeros(num_classes, dtype=np.int64)  # pixels outside any instance
    fn0 = np.zeros(num_classes, dtype=np.int64)
    fp = np.zeros(num_classes, dtype=np.int64)
    for p, g, inst in zip(preds, gts, insts):
        p, g = _pair(p, g)
        g, inst = _pair(g, inst)
        for n in np.unique(inst[inst > 0]):
            member = inst == n
            classes = np.unique(g[member])
            if len(classes) != 1 or classes[0] == ignore_index:
                raise ValueError(f"instance {n} spans classes {classes.tolist()}")
            z = int(classes[0])
            area = int(np.count_nonzero(member))
            hit = int(np.count_nonzero(member & (p == z)))
            n_inst[z] += 1
            area_sum[z] += area
            tp_frac[z] += Fraction(hit, area)
            fn_frac[z] += Fraction(area - hit, area)
        valid = g != ignore_index
        stuff = valid & (inst == 0)
        for z in range(num_classes):
            gz, pz = g == z, valid & (p == z)
            tp0[z] += np.count_nonzero(stuff & gz & pz)
            fn0[z] += np.count_nonzero(stuff & gz & ~pz)
            fp[z] += np.count_nonzero(pz & ~gz)
    out = []
    for z in range(num_classes):
        if n_inst[z] == 0:
            out.append(None)
            continue
        mean_size = Fraction(area_sum[z], n_inst[z])
        itp = mean_size * tp_frac[z] + int(tp0[z])
        ifn = mean_size * fn_frac[z] + int(fn0[z])
        out.append(float(itp / (itp + ifn + int(fp[z]))))
    return out, _mean(out)


def ia_iou(preds, gts, masks, num_classes, ignore_index=IGNORE):
    """IoU restricted to invalid-mask pixels, summed over all images before dividing."""
    inter = np.zeros(num_classes, dtype=np.int64)
    union = np.zeros(num_classes, dtype=np.int64)
    for p, g, m in zip(_as_list(preds), _as_list(gts), _as_list(masks)):
        p, g = _pair(p, g)
        m = np.asarray(m)
        if m.shape != g.shape:
            raise ValueError(f"mask {m.shape} does not match image {g.shape}")
        inside = (m != 0) & (g != ignore_index)
        for z in range(num_classes):
            pz, gz = inside & (p == z), inside & (g == z)
            inter[z] += np.count_nonzero(pz & gz)
            union[z] += np.count_nonzero(pz | gz)
    out = [float(i / u) if u > 0 else None for i, u in zip(inter, union)]
    return out, _mean(out)


@dataclass
class MetricsReport:
    class_names: list
    iou: list
    iiou: list = field(default_factory=list)
    ia_iou: list = field(default_factory=list)
    miou: float | None = None
    miiou: float | None = None
    mia_iou: float | None = None
    pixels_evaluated: int = 0

    def to_dict(self):
        per_class = {}
        for z, name in enumerate(self.class_names):
            per_class[name] = {
                "iou": self.iou[z],
                "iiou": self.iiou[z] if self.iiou else None,
                "ia_iou": self.ia_iou[z] if self.ia_iou else None,
            }
        return {
            "per_class": per_class,
            "miou": self.miou,
            "miiou": self.miiou,
            "mia_iou": self.mia_iou,
            "pixels_evaluated": self.pixels_evaluated,
        }


def evaluate(preds, gts, num_classes, instances=None, masks=None, class_names=None, ignore_index=IGNORE):
    names = list(class_names) if class_names else [str(z) for z in range(num_classes)]
    acc = confusion_matrix(preds, gts, num_classes, ignore_index)
    ious, m = miou(acc)
    report = MetricsReport(names, ious, miou=m, pixels_evaluated=int(acc.sum()))
    if instances is not None:
        report.iiou, report.miiou = iiou(preds, gts, instances, num_classes, ignore_index)
    if masks is not None:
        report.ia_iou, report.mia_iou = ia_iou(preds, gts, masks, num_classes, ignore_index)
    return report
