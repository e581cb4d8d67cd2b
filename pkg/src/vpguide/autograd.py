"""Tape-based reverse-mode differentiation for the few ops the attention stack uses.

Values are float64 numpy arrays. Ops record onto the innermost active
:class:`Tape` only when at least one input requires a gradient, so the same
functions serve both inference and training.
"""

from __future__ import annotations

import math

import numpy as np

_TAPES: list["Tape"] = []


class Var:
    __slots__ = ("value", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Records one forward pass; ``backward`` replays it in reverse."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: dict[int, Var] = {}

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def _record(self, node):
        self.nodes.append(node)
        for p in node._parents:
            if p.requires_grad and p._backward is None:
                self.leaves.setdefault(id(p), p)

    def backward(self, out: Var):
        if out.value.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {out.shape}")
        for leaf in self.leaves.values():
            leaf.grad = None
        for node in self.nodes:
            node.grad = None
        out.grad = np.ones_like(out.value)
        # nodes were appended in creation order, which is a topological order
        for node in reversed(self.nodes):
            if node.grad is not None:
                node._backward(node.grad)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _make(value, parents, backward):
    tape = _TAPES[-1] if _TAPES else None
    out = Var(value)
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        tape._record(out)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.value.T)
        if b.requires_grad:
            b._accum(a.value.T @ g)

    return _make(a.value @ b.value, (a, b), backward)


def add(a, b):
    a, b = as_var(a), as_var(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.value + b.value, (a, b), backward)


def sub(a, b):
    a, b = as_var(a), as_var(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.value - b.value, (a, b), backward)


def mul(a, b):
    a, b = as_var(a), as_var(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.value, b.shape))

    return _make(a.value * b.value, (a, b), backward)


def scale(a, factor: float):
    a = as_var(a)

    def backward(g):
        a._accum(g * factor)

    return _make(a.value * factor, (a,), backward)


def transpose(a):
    a = as_var(a)

    def backward(g):
        a._accum(g.T)

    return _make(a.value.T, (a,), backward)


def reshape(a, shape):
    a = as_var(a)
    old = a.shape

    def backward(g):
        a._accum(g.reshape(old))

    return _make(a.value.reshape(shape), (a,), backward)


def total(a):
    a = as_var(a)

    def backward(g):
        a._accum(np.broadcast_to(g, a.shape))

    return _make(np.sum(a.value), (a,), backward)


def softmax_rows(a):
    a = as_var(a)
    x = a.value
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("softmax_rows received non-finite input")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        a._accum(y * (g - np.sum(g * y, axis=1, keepdims=True)))

    return _make(y, (a,), backward)


def sigmoid(a):
    a = as_var(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))

    def backward(g):
        a._accum(g * y * (1.0 - y))

    return _make(y, (a,), backward)


def take_cols(a, idx):
    """Columns ``a[:, idx]``; repeated indices are allowed."""
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga.T, idx, g.T)
        a._accum(ga)

    return _make(a.value[:, idx], (a,), backward)


def concat_cols(parts):
    parts = [as_var(p) for p in parts]
    widths = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, widths[:-1], widths[1:]):
            if p.requires_grad:
                p._accum(g[:, lo:hi])

    return _make(np.concatenate([p.value for p in parts], axis=1), tuple(parts), backward)


def resample(a, ry, rx):
    """Separable linear resampling of a c x h x w map: ``ry @ a[c] @ rx.T``."""
    a = as_var(a)

    def backward(g):
        a._accum(np.matmul(np.matmul(ry.T, g), rx))

    return _make(np.matmul(np.matmul(ry, a.value), rx.T), (a,), backward)


def attention(q, k, v, bias=None, residual=False):
    """Single-head ``softmax(q^T k / sqrt(c) + bias) v^T`` returned as c x Nq."""
    q, k, v = as_var(q), as_var(k), as_var(v)
    c = q.shape[0]
    if k.shape[0] != c or v.shape[0] != c:
        raise ValueError(f"channel mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    if k.shape[1] != v.shape[1]:
        raise ValueError(f"key/value count mismatch: k {k.shape}, v {v.shape}")
    logits = scale(matmul(transpose(q), k), 1.0 / math.sqrt(c))
    if bias is not None:
        bias = as_var(bias)
        if bias.value.shape != (k.shape[1],):
            raise ValueError(f"bias length {bias.value.shape} != key count {k.shape[1]}")
        if not np.all(np.isfinite(bias.value)):
            raise FloatingPointError("attention bias is not finite")
        logits = add(logits, reshape(bias, (1, k.shape[1])))
    out = matmul(v, transpose(softmax_rows(logits)))
    if residual:
        out = add(out, q)
    return out


def cross_entropy(logits, labels, ignore_index=255):
    """Mean softmax cross-entropy of K x N logits against N labels."""
    logits = as_var(logits)
    labels = np.asarray(labels).reshape(-1)
    n_classes, n = logits.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} logit columns")
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= n_classes))
    if np.any(bad):
        raise ValueError(f"label {labels[bad][0]} outside [0, {n_classes})")
    x = logits.value
    shifted = x - x.max(axis=0, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=0))
    cols = np.nonzero(valid)[0]
    n_valid = max(len(cols), 1)
    picked = shifted[labels[cols], cols] - log_z[cols]
    loss = -picked.sum() / n_valid

    def backward(g):
        p = np.exp(shifted - log_z)
        p[:, ~valid] = 0.0
        p[labels[cols], cols] -= 1.0
        logits._accum(g * p / n_valid)

    return _make(np.asarray(loss), (logits,), backward)
