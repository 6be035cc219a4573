"""Minimal binary PGM (P5) and PPM (P6) readers and writers."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _write_netpbm(path, magic: bytes, arr: np.ndarray):
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def write_pgm(path, arr: np.ndarray):
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {arr.shape}")
    _write_netpbm(path, b"P5", arr)


def write_ppm(path, arr: np.ndarray):
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"PPM needs an [H,W,3] array, got shape {arr.shape}")
    _write_netpbm(path, b"P6", arr)


def _parse_header(buf: bytes, magic: bytes) -> tuple[int, int, int]:
    """Returns (width, height, data offset); handles comments and whitespace."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4:
        if i >= len(buf):
            raise ValueError("truncated netpbm header")
        ch = buf[i:i + 1]
        if ch.isspace():
            i += 1
        elif ch == b"#":
            while i < len(buf) and buf[i] != 0x0A:
                i += 1
        else:
            j = i
            while j < len(buf) and not buf[j:j + 1].isspace():
                j += 1
            tokens.append(buf[i:j])
            i = j
    if tokens[0] != magic:
        raise ValueError(f"expected {magic.decode()} file, got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"only maxval 255 is supported, got {maxval}")
    return w, h, i + 1  # single whitespace byte separates header from data


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    w, h, off = _parse_header(buf, b"P5")
    data = np.frombuffer(buf, dtype=np.uint8, count=h * w, offset=off)
    return data.reshape(h, w).copy()


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    w, h, off = _parse_header(buf, b"P6")
    data = np.frombuffer(buf, dtype=np.uint8, count=h * w * 3, offset=off)
    return data.reshape(h, w, 3).copy()
