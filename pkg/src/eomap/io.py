"""Grid files, visualization exports, and atomic file writes."""
from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

GRID_MAGIC = b"EOMG"
GRID_VERSION = 1
_TAGS = {0: np.dtype("<u1"), 1: np.dtype("<f4")}
_HEADER = struct.Struct("<4sHBII")


def atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode())


def grid_bytes(grid) -> bytes:
    """Serialize a 2-d grid; uint8/bool grids as u8, everything else as f32."""
    g = np.asarray(grid)
    if g.ndim != 2:
        raise ValueError("grids are 2-d")
    if g.dtype == np.uint8 or g.dtype == bool:
        tag = 0
    else:
        tag = 1
        if not np.all(np.isfinite(g)):
            raise ValueError("f32 grids must be finite")
    payload = np.ascontiguousarray(g, dtype=_TAGS[tag]).tobytes()
    return _HEADER.pack(GRID_MAGIC, GRID_VERSION, tag, g.shape[0], g.shape[1]) + payload


def grid_from_bytes(buf: bytes, expect_dtype=None) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise ValueError("truncated grid file")
    magic, version, tag, h, w = _HEADER.unpack_from(buf)
    if magic != GRID_MAGIC:
        raise ValueError("bad magic")
    if version != GRID_VERSION:
        raise ValueError(f"unsupported grid version {version}")
    if tag not in _TAGS:
        raise ValueError(f"unknown dtype tag {tag}")
    dt = _TAGS[tag]
    if expect_dtype is not None and np.dtype(expect_dtype) != dt.newbyteorder("="):
        raise ValueError(f"dtype mismatch: file holds {dt}, expected {np.dtype(expect_dtype)}")
    n = h * w * dt.itemsize
    if len(buf) - _HEADER.size != n:
        raise ValueError("truncated grid file")
    arr = np.frombuffer(buf, dtype=dt, offset=_HEADER.size).reshape(h, w)
    return arr.astype(dt.newbyteorder("="))


def write_grid(grid, path):
    atomic_write_bytes(path, grid_bytes(grid))


def read_grid(path, expect_dtype=None) -> np.ndarray:
    with open(path, "rb") as f:
        return grid_from_bytes(f.read(), expect_dtype)


def write_pgm(path, image):
    img = np.asarray(image, dtype=np.uint8)
    h, w = img.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def write_ppm(path, rgb):
    img = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = img.shape
    atomic_write_bytes(path, f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    kind, w, h = fields[0], int(fields[1]), int(fields[2])
    pix = np.frombuffer(data, dtype=np.uint8, offset=pos + 1)
    return pix.reshape(h, w) if kind == b"P5" else pix.reshape(h, w, 3)


def eom_to_gray(E, T) -> np.ndarray:
    """Darker means earlier: 255 * (1 - E / T)."""
    return np.rint(255.0 * (1.0 - np.asarray(E, dtype=float) / T)).clip(0, 255).astype(np.uint8)


def mask_to_gray(M) -> np.ndarray:
    return (np.asarray(M) != 0).astype(np.uint8) * 255
