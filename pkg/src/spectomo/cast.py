"""CAST binary array container.

Layout (all integers little-endian)::

    b"CAST"                 magic
    u8                      version (1)
    u8                      ndim
    u8                      dtype code, 0 = float64, 1 = complex128
    ndim x u64              dims
    payload                 row-major little-endian values
    u32                     metadata length in bytes
    metadata                UTF-8 JSON object
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

__all__ = ["MAGIC", "VERSION", "write_cast", "read_cast", "dumps", "loads"]

MAGIC = b"CAST"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<c16")}
_CODES = {"f": 0, "c": 1}


def dumps(array, metadata: dict | None = None) -> bytes:
    """Serialize ``array`` (real or complex, up to 255 dims) with metadata."""
    a = np.asarray(array)
    if a.dtype.kind in "biuf":
        code = 0
    elif a.dtype.kind == "c":
        code = 1
    else:
        raise TypeError(f"unsupported dtype {a.dtype}")
    if a.ndim > 255:
        raise ValueError("too many dimensions")
    a = np.asarray(a, dtype=_DTYPES[code])  # ascontiguousarray would promote 0-d to 1-d
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    head = MAGIC + struct.pack("<BBB", VERSION, a.ndim, code)
    head += struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes(order="C") + struct.pack("<I", len(meta)) + meta


def loads(blob: bytes):
    """Inverse of :func:`dumps`; returns ``(array, metadata)``."""
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise ValueError("not a CAST container (bad magic)")
    if len(view) < 7:
        raise ValueError("truncated CAST header")
    version, ndim, code = struct.unpack_from("<BBB", view, 4)
    if version != VERSION:
        raise ValueError(f"unsupported CAST version {version}")
    if code not in _DTYPES:
        raise ValueError(f"unknown dtype code {code}")
    off = 7
    if len(view) < off + 8 * ndim:
        raise ValueError("truncated CAST header")
    dims = struct.unpack_from(f"<{ndim}Q", view, off)
    off += 8 * ndim
    dt = _DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(view) < off + nbytes + 4:
        raise ValueError("truncated CAST payload")
    arr = np.frombuffer(view[off:off + nbytes], dtype=dt).reshape(dims).copy()
    off += nbytes
    (mlen,) = struct.unpack_from("<I", view, off)
    off += 4
    if len(view) != off + mlen:
        raise ValueError("CAST metadata length does not match file size")
    meta = json.loads(bytes(view[off:off + mlen]).decode("utf-8")) if mlen else {}
    return arr, meta


def write_cast(path, array, metadata: dict | None = None) -> None:
    Path(path).write_bytes(dumps(array, metadata))


def read_cast(path):
    """Read a CAST file; returns ``(array, metadata)``."""
    return loads(Path(path).read_bytes())
