"""EPTN binary tensor container.

Layout, all little-endian: magic "EPTN", u16 version (=1), u8 dtype code
(0 = f32, 1 = f64), u8 rank, rank x u64 extents, then the row-major payload.
Round trips are bit-exact on every platform.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import ParseError

MAGIC = b"EPTN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        raise ParseError(f"EPTN stores f32/f64 only, got {arr.dtype}")
    code = _CODES[arr.dtype]
    header = struct.pack("<4sHBB", MAGIC, VERSION, code, arr.ndim)
    extents = np.asarray(arr.shape, dtype="<u8").tobytes()
    payload = np.ascontiguousarray(arr).astype(_DTYPES[code], copy=False).tobytes()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header + extents + payload)
    os.replace(tmp, path)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise ParseError(f"{path}: truncated EPTN header")
    magic, version, code, rank = struct.unpack_from("<4sHBB", blob, 0)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    if code not in _DTYPES:
        raise ParseError(f"{path}: unknown dtype code {code}")
    off = 8
    if len(blob) < off + 8 * rank:
        raise ParseError(f"{path}: truncated extent table")
    shape = tuple(int(x) for x in np.frombuffer(blob, dtype="<u8", count=rank, offset=off))
    off += 8 * rank
    dtype = _DTYPES[code]
    count = 1
    for e in shape:
        count *= e
    if len(blob) != off + count * dtype.itemsize:
        raise ParseError(f"{path}: payload size mismatch")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=off)
    return data.reshape(shape).astype(dtype.newbyteorder("="), copy=True)
