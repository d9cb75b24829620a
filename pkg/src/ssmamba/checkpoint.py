"""Flat binary parameter container.

Layout (little-endian):

    magic "SSCK" | u16 version=1 | u32 entry count
    then per entry, sorted by name:
    u16 name byte length | UTF-8 name | u8 dtype (0=f32, 1=f64, 2=u8)
    | u8 ndim | ndim x u32 extents | raw little-endian values

Sorting makes the byte stream a pure function of the content, so identical
parameters produce identical files.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointFormatError"]

MAGIC = b"SSCK"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8", 2: "|u1"}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(entries, path):
    """entries: dict name -> ndarray (float32, float64 or uint8)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(entries)))
        for name in sorted(entries):
            arr = np.ascontiguousarray(entries[name])
            if arr.dtype not in _CODES:
                raise CheckpointFormatError(f"{name}: unsupported dtype {arr.dtype}")
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(_DTYPES[_CODES[arr.dtype]]).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointFormatError("bad magic")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}")
    offset = 10
    entries = {}

    def take(n, what):
        nonlocal offset
        if offset + n > len(blob):
            raise CheckpointFormatError(f"truncated while reading {what}")
        out = blob[offset : offset + n]
        offset += n
        return out

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2, name))
        if code not in _DTYPES:
            raise CheckpointFormatError(f"{name}: unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, name))
        size = int(np.prod(shape)) if ndim else 1
        itemsize = np.dtype(_DTYPES[code]).itemsize
        arr = np.frombuffer(take(size * itemsize, name), dtype=_DTYPES[code]).reshape(shape)
        entries[name] = arr.copy()
    if offset != len(blob):
        raise CheckpointFormatError(f"{len(blob) - offset} trailing bytes")
    return entries
