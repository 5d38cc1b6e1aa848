"""Minimal FTS1 tensor file I/O.

Independent implementation of the interchange format the classifier reads:
magic ``FTS1``, u8 rank, three reserved zero bytes, u32 little-endian dims,
float32 little-endian row-major payload.
"""

import struct

import numpy as np

MAGIC = b"FTS1"


class FtsError(Exception):
    """Malformed FTS1 file."""


def write_fts(path, tensor):
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    if arr.ndim < 1 or arr.ndim > 255:
        raise FtsError(f"rank {arr.ndim} outside [1, 255]")
    if not np.all(np.isfinite(arr)):
        raise FtsError("refusing to write non-finite values")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B3x", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_fts(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FtsError(f"{path}: shorter than the 8-byte header")
    if raw[:4] != MAGIC:
        raise FtsError(f"{path}: bad magic {raw[:4]!r}")
    rank = raw[4]
    if rank < 1:
        raise FtsError(f"{path}: rank 0")
    if len(raw) < 8 + 4 * rank:
        raise FtsError(f"{path}: truncated dimension list")
    dims = struct.unpack(f"<{rank}I", raw[8:8 + 4 * rank])
    count = 1
    for d in dims:
        count *= d
    expected = 8 + 4 * rank + 4 * count
    if len(raw) != expected:
        raise FtsError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw[8 + 4 * rank:], dtype="<f4").reshape(dims).copy()
