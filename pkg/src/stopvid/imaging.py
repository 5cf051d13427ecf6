"""Binary PGM (P5) output for per-frame score maps and region masks."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .synthdata import FormatError


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"PGM needs a 2-D uint8 array, got {img.dtype} {img.shape}")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Parse a binary P5 file (comments allowed in the header)."""
    blob = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        fields.append(blob[start:pos])
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported")
    pos += 1  # single whitespace byte after maxval
    data = blob[pos:]
    if len(data) != width * height:
        raise FormatError(f"{path}: expected {width * height} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def upsample(grid_values: np.ndarray, h: int, w: int) -> np.ndarray:
    """[N_p] patch values -> [g*h, g*w] image with each patch a constant block."""
    g = math.isqrt(grid_values.size)
    if g * g != grid_values.size:
        raise ValueError(f"{grid_values.size} values do not form a square grid")
    return np.kron(grid_values.reshape(g, g), np.ones((h, w)))


def heatmap(values: np.ndarray, h: int, w: int) -> np.ndarray:
    """Min-max normalise a patch score map to 0..255 and upsample; constant maps become black."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    norm = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    return np.round(upsample(norm, h, w) * 255).astype(np.uint8)


def mask_image(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    """Binary region mask -> 255 on selected patches, 0 elsewhere."""
    return (upsample(np.asarray(mask) > 0, h, w) * 255).astype(np.uint8)
