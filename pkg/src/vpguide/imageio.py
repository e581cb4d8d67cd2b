"""Binary PGM (P5) and small JSON helpers."""

import json
import re
from pathlib import Path

import numpy as np

_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM. 8-bit files give uint8, 16-bit files give uint16."""
    buf = Path(path).read_bytes()
    m = _HEADER.match(buf)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    count = width * height
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=m.end())
    return data.reshape(height, width).astype(np.uint8 if maxval < 256 else np.uint16)


def write_pgm(path, img):
    """Write a 2-D integer image; values above 255 switch to 16-bit samples."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 65535):
        raise ValueError("PGM samples must lie in [0, 65535]")
    wide = arr.size and arr.max() > 255
    maxval = 65535 if wide else 255
    payload = arr.astype(">u2" if wide else "u1").tobytes()
    h, w = arr.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + payload)


def to_u8(values, lo=0.0, hi=1.0) -> np.ndarray:
    """Map a float raster from [lo, hi] to 8-bit for inspection renders."""
    scaled = (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
