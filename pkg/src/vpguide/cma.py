"""Contextualized motion attention and prediction fusion.

Class queries are contextualized against the local context with a
VP-proximity bias, refined against the augmented dynamic context, and turned
into a per-class gate O that blends the context and detail predictions.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .tensor import Tensor, resize_matrix


def ca_e_var(q, k, v, bias):
    """``softmax(q^T k / sqrt(c) + bias) v^T + q``; bias has one entry per key."""
    return ag.attention(q, k, v, bias=bias, residual=True)


def ca_e(q, k, v, bias) -> Tensor:
    f = lambda x: np.asarray(x, dtype=np.float64)  # noqa: E731
    return Tensor(ca_e_var(f(q), f(k), f(v), f(bias)).value)


def _flat(x):
    x = ag.as_var(x)
    if x.value.ndim == 3:
        c, h, w = x.shape
        return ag.reshape(x, (c, h * w))
    return x


def contextualize_queries_var(queries, local, bias, weights):
    wq, wk, wv = weights
    local = _flat(local)
    return ca_e_var(ag.matmul(wq, queries), ag.matmul(wk, local), ag.matmul(wv, local), bias)


def motion_attention_var(queries, augmented, bias, layers):
    """Stack of CA_E blocks, one (W_q, W_k, W_v) triple per layer; no layers is a bypass."""
    augmented = _flat(augmented)
    out = queries
    for wq, wk, wv in layers:
        out = ca_e_var(ag.matmul(wq, out), ag.matmul(wk, augmented), ag.matmul(wv, augmented), bias)
    return out


def detail_attention_var(merged, local):
    """Raw ``F_m^T F_tl`` (K x hw) and its logistic squash."""
    raw = ag.matmul(ag.transpose(merged), _flat(local))
    return raw, ag.sigmoid(raw)


def upsample_var(x, out_h, out_w):
    """Bilinear (half-pixel) resize of a c x h x w Var."""
    x = ag.as_var(x)
    _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x
    return ag.resample(x, resize_matrix(h, out_h), resize_matrix(w, out_w))


def fuse_predictions_var(p_context, p_detail, gate):
    """``(1 - O) * P_c + O * P_d`` at the detail resolution."""
    p_detail = ag.as_var(p_detail)
    _, big_h, big_w = p_detail.shape
    p_context = upsample_var(p_context, big_h, big_w)
    gate = upsample_var(gate, big_h, big_w)
    return ag.add(p_context, ag.mul(gate, ag.sub(p_detail, p_context)))


def total_loss_var(p_fused, p_detail, labels, detail_weight=0.1, ignore_index=255):
    if not 0.0 <= detail_weight <= 1.0:
        raise ValueError(f"detail loss weight must lie in [0, 1], got {detail_weight}")
    k = p_fused.shape[0]
    fused = ag.cross_entropy(ag.reshape(p_fused, (k, -1)), labels, ignore_index)
    detail = ag.cross_entropy(ag.reshape(p_detail, (k, -1)), labels, ignore_index)
    return ag.add(ag.scale(fused, 1.0 - detail_weight), ag.scale(detail, detail_weight))


def _w(weights):
    return [np.asarray(x, dtype=np.float64) for x in weights]


def contextualize_queries(queries, local, bias, weights) -> Tensor:
    return Tensor(contextualize_queries_var(np.asarray(queries, np.float64), np.asarray(local, np.float64),
                                            np.asarray(bias, np.float64).ravel(), _w(weights)).value)


def motion_attention(queries, augmented, bias, layers) -> Tensor:
    layers = [_w(layer) for layer in layers]
    out = motion_attention_var(np.asarray(queries, np.float64), np.asarray(augmented, np.float64),
                               np.asarray(bias, np.float64).ravel(), layers)
    return Tensor(ag.as_var(out).value)


def detail_attention_map(merged, local):
    """Returns (O_raw, O) as K x h x w tensors."""
    loc = np.asarray(local, np.float64)
    m = np.asarray(merged, np.float64)
    if m.shape[0] != loc.shape[0]:
        raise ValueError(f"channel mismatch: merged {m.shape} vs local {loc.shape}")
    raw, gate = detail_attention_var(m, loc)
    shape = (m.shape[1],) + loc.shape[1:]
    return Tensor(raw.value.reshape(shape)), Tensor(gate.value.reshape(shape))


def fuse_predictions(p_context, p_detail, gate) -> Tensor:
    pc, pd, o = (np.asarray(x, np.float64) for x in (p_context, p_detail, gate))
    if pc.shape[0] != pd.shape[0] or o.shape[0] != pd.shape[0]:
        raise ValueError(f"class count mismatch: {pc.shape}, {pd.shape}, {o.shape}")
    return Tensor(fuse_predictions_var(pc, pd, o).value)


def total_loss(p_fused, p_detail, labels, detail_weight=0.1, ignore_index=255) -> float:
    out = total_loss_var(ag.as_var(np.asarray(p_fused, np.float64)), ag.as_var(np.asarray(p_detail, np.float64)),
                         np.asarray(labels), detail_weight, ignore_index)
    return float(out.value)
