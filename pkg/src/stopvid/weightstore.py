"""Binary tensor store.

Layout (all little-endian)::

    b"STOPW1\\0"
    u32 n_header, then n_header x i32        # config header
    u32 n_tensors
    per tensor:
        i32 name_len, name bytes (utf-8)
        i32 rank, rank x i32 extents
        prod(extents) x f64
"""

from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"STOPW1\0"


class FormatError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray], header: list[int]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(header)))
    buf.write(struct.pack(f"<{len(header)}i", *header))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<i", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<i", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}i", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> tuple[list[int], dict[str, np.ndarray]]:
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError("not a weight store (bad magic)")
    pos = len(MAGIC)

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise FormatError("truncated weight store")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (n_header,) = take("<I")
    header = list(take(f"<{n_header}i"))
    (n_tensors,) = take("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = take("<i")
        if pos + name_len > len(blob):
            raise FormatError("truncated weight store")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<i")
        shape = take(f"<{rank}i")
        count = int(np.prod(shape)) if rank else 1
        if pos + 8 * count > len(blob):
            raise FormatError(f"truncated weight store in tensor {name!r}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        tensors[name] = arr.astype(np.float64)
    if pos != len(blob):
        raise FormatError("trailing bytes after last tensor")
    return header, tensors


def save(path: str | Path, tensors: Mapping[str, np.ndarray], header: list[int]) -> None:
    Path(path).write_bytes(dumps(tensors, header))


def load(path: str | Path) -> tuple[list[int], dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())


def content_hash(tensors: Mapping[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        h.update(name.encode("utf-8"))
        h.update(repr(arr.shape).encode("ascii"))
        h.update(arr.tobytes())
    return h.hexdigest()
