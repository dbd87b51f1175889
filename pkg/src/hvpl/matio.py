"""HVPL-MAT v1 array container.

Layout: magic ``HVPLMAT1``, little-endian u32 dtype code (0 = f32, 1 = f64),
u32 rank, ``rank`` u64 dims, then the row-major payload. A file may hold
several records back to back; :func:`read_all` returns them in order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"HVPLMAT1"
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}


def encode(array, dtype="f8") -> bytes:
    dt = np.dtype(dtype).newbyteorder("<")
    if dt not in CODES:
        raise FormatError(f"unsupported dtype {dtype}")
    a = np.asarray(array, dtype=dt)  # ascontiguousarray would promote 0-d to 1-d
    head = MAGIC + struct.pack("<II", CODES[dt], a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes(order="C")


def decode(buf: bytes, offset: int = 0, source="<bytes>"):
    """Decode one record starting at ``offset``; returns (array, next_offset)."""
    if buf[offset:offset + 8] != MAGIC:
        raise FormatError(f"{source}: bad magic at byte {offset}")
    try:
        code, rank = struct.unpack_from("<II", buf, offset + 8)
        dims = struct.unpack_from(f"<{rank}Q", buf, offset + 16)
    except struct.error as exc:
        raise FormatError(f"{source}: truncated header") from exc
    if code not in DTYPES:
        raise FormatError(f"{source}: unknown dtype code {code}")
    dt = DTYPES[code]
    start = offset + 16 + 8 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    end = start + count * dt.itemsize
    if end > len(buf):
        raise FormatError(f"{source}: payload truncated ({len(buf) - start} of {end - start} bytes)")
    arr = np.frombuffer(buf, dtype=dt, count=count, offset=start).reshape(dims).copy()
    return arr, end


def header(buf: bytes, offset: int = 0) -> dict:
    code, rank = struct.unpack_from("<II", buf, offset + 8)
    dims = struct.unpack_from(f"<{rank}Q", buf, offset + 16)
    return {"dtype": DTYPES[code].name, "rank": rank, "dims": list(dims)}


def save(path, *arrays, dtype="f8"):
    Path(path).write_bytes(b"".join(encode(a, dtype) for a in arrays))


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror or exc}") from exc


def read_all(path) -> list[np.ndarray]:
    buf = _read(path)
    out, off = [], 0
    while off < len(buf):
        arr, off = decode(buf, off, source=str(path))
        out.append(arr)
    if not out:
        raise FormatError(f"{path}: empty file")
    return out


def load(path) -> np.ndarray:
    return read_all(path)[0]


def headers(path) -> list[dict]:
    """Header of every record in a file, without converting payloads."""
    buf = _read(path)
    out, off = [], 0
    while off < len(buf):
        if buf[off:off + 8] != MAGIC:
            raise FormatError(f"{path}: bad magic at byte {off}")
        h = header(buf, off)
        h["offset"] = off
        out.append(h)
        off += 16 + 8 * h["rank"] + int(np.prod(h["dims"], dtype=np.int64)) * np.dtype(h["dtype"]).itemsize
    return out
