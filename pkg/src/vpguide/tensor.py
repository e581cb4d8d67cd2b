"""Dense float32 tensors, the CTNSR file format and the core numeric ops."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import autograd as ag

MAGIC = b"CTNSR"
VERSION = 1


class Tensor:
    """Immutable rank 1-3 float32 array.

    Computation happens on plain numpy arrays (``np.asarray(t)`` works); the
    class exists to pin down the dtype/rank contract at module boundaries.
    """

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float32)
        if not 1 <= arr.ndim <= 3:
            raise ValueError(f"tensor rank must be 1..3, got {arr.ndim}")
        if min(arr.shape) < 1:
            raise ValueError(f"tensor extents must be >= 1, got {arr.shape}")
        arr.setflags(write=False)
        self._data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def data(self) -> np.ndarray:
        return self._data

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def __array__(self, dtype=None, copy=None):
        return self._data if dtype is None else self._data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._data, other._data)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def to_bytes(self) -> bytes:
        header = MAGIC + bytes([VERSION, self._data.ndim])
        header += struct.pack(f"<{self._data.ndim}I", *self.shape)
        return header + self._data.astype("<f4").tobytes(order="C")

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Tensor":
        if buf[:5] != MAGIC:
            raise ValueError("not a CTNSR file (bad magic)")
        if buf[5] != VERSION:
            raise ValueError(f"unsupported CTNSR version {buf[5]}")
        rank = buf[6]
        if not 1 <= rank <= 3:
            raise ValueError(f"bad CTNSR rank {rank}")
        shape = struct.unpack_from(f"<{rank}I", buf, 7)
        offset = 7 + 4 * rank
        count = int(np.prod(shape))
        payload = buf[offset:]
        if len(payload) != 4 * count:
            raise ValueError(f"CTNSR payload is {len(payload)} bytes, expected {4 * count}")
        return cls(np.frombuffer(payload, dtype="<f4").reshape(shape))

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Tensor":
        return cls.from_bytes(Path(path).read_bytes())


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def matmul(a, b) -> Tensor:
    a, b = _f64(a), _f64(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return Tensor(a @ b)


def softmax_rows(x) -> Tensor:
    return Tensor(ag.softmax_rows(_f64(x)).value)


def cross_attention(q, k, v, bias=None, residual=False) -> Tensor:
    """``softmax(q^T k / sqrt(c) + bias) v^T``, transposed back to c x Nq.

    ``bias`` has one entry per key and is added to every query row. With
    ``residual`` the queries are added to the output.
    """
    out = ag.attention(_f64(q), _f64(k), _f64(v), None if bias is None else _f64(bias), residual)
    return Tensor(out.value)


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic n_out x n_in linear interpolation matrix, half-pixel centers."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"resize extents must be >= 1, got {n_in} -> {n_out}")
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    """Resize a c x h x w map with align-corners-false bilinear sampling."""
    arr = np.asarray(x)
    if arr.ndim != 3:
        raise ValueError(f"bilinear_resize expects c x h x w, got shape {arr.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target extents must be >= 1, got {out_h} x {out_w}")
    _, h, w = arr.shape
    if (h, w) == (out_h, out_w):
        return Tensor(arr)
    out = ag.resample(_f64(arr), resize_matrix(h, out_h), resize_matrix(w, out_w))
    return Tensor(out.value)


def grad_check(f, x, eps: float = 1e-3) -> float:
    """Largest relative gap between tape gradients and central differences.

    ``f`` maps a Var (or a dict of Vars, mirroring ``x``) to a scalar Var.
    The error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not 1e-4 <= eps <= 1e-2:
        raise ValueError(f"eps must lie in [1e-4, 1e-2], got {eps}")
    named = isinstance(x, dict)
    values = {k: _f64(v).copy() for k, v in (x.items() if named else [("x", x)])}

    def call(vals, track):
        vars_ = {k: ag.Var(v, requires_grad=track) for k, v in vals.items()}
        return vars_, f(vars_ if named else vars_["x"])

    with ag.Tape() as tape:
        vars_, out = call(values, True)
        tape.backward(out)
    worst = 0.0
    for name, base in values.items():
        analytic = vars_[name].grad
        if analytic is None:
            analytic = np.zeros_like(base)
        if not np.all(np.isfinite(analytic)):
            raise FloatingPointError(f"non-finite gradient for {name!r}")
        flat = base.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = float(call(values, False)[1].value)
            flat[i] = keep - eps
            down = float(call(values, False)[1].value)
            flat[i] = keep
            numeric = (up - down) / (2 * eps)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
