"""HSIC writer/reader implementing the published byte layout.

This is the converter's only coupling to the classifier package: the file
format.  Layout (little-endian):

    magic "HSIC" | u16 version=1 | u32 h, w, b, K | u8 dtype (0 = f32)
    | u8 has_wavelengths | 6 reserved bytes
    | [b x f32 wavelengths]                 (if has_wavelengths)
    | h*w*b x f32 values, band-interleaved by pixel (row-major pixels)
    | h*w x i32 labels, row-major
    | K x (u16 byte length + UTF-8 class name)
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"HSIC"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIIBB6x")


class HsicError(ValueError):
    pass


def write_hsic(path, data, labels, class_names, wavelengths=None):
    data = np.ascontiguousarray(data, dtype="<f4")
    labels = np.ascontiguousarray(labels, dtype="<i4")
    if data.ndim != 3 or labels.shape != data.shape[:2]:
        raise HsicError(f"cube {data.shape} and labels {labels.shape} disagree")
    h, w, b = data.shape
    k = len(class_names)
    if labels.min() < 0 or labels.max() > k:
        raise HsicError(f"labels outside [0, {k}]")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, h, w, b, k, 0,
                              1 if wavelengths is not None else 0))
        if wavelengths is not None:
            wl = np.ascontiguousarray(wavelengths, dtype="<f4")
            if wl.shape != (b,):
                raise HsicError("wavelengths must have one entry per band")
            fh.write(wl.tobytes())
        fh.write(data.tobytes())
        fh.write(labels.tobytes())
        for name in class_names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)


def read_hsic(path):
    """Returns (data, labels, class_names, wavelengths)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise HsicError("truncated header")
    magic, version, h, w, b, k, dtype, has_wl = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC or version != VERSION or dtype != 0:
        raise HsicError(f"not an HSIC v{VERSION} f32 file")
    offset = _HEADER.size

    def take(n, what):
        nonlocal offset
        if offset + n > len(blob):
            raise HsicError(f"truncated while reading {what}")
        out = blob[offset : offset + n]
        offset += n
        return out

    wavelengths = None
    if has_wl:
        wavelengths = np.frombuffer(take(4 * b, "wavelengths"), dtype="<f4").copy()
    data = np.frombuffer(take(4 * h * w * b, "values"), dtype="<f4").reshape(h, w, b).copy()
    labels = np.frombuffer(take(4 * h * w, "labels"), dtype="<i4").reshape(h, w).copy()
    names = []
    for i in range(k):
        (ln,) = struct.unpack("<H", take(2, "name length"))
        names.append(take(ln, f"class name {i}").decode("utf-8"))
    if offset != len(blob):
        raise HsicError("trailing bytes after class names")
    return data, labels, names, wavelengths


def read_header(path):
    """(h, w, b, k, has_wavelengths) without loading the payload."""
    with open(path, "rb") as fh:
        blob = fh.read(_HEADER.size)
    if len(blob) < _HEADER.size:
        raise HsicError("truncated header")
    magic, version, h, w, b, k, dtype, has_wl = _HEADER.unpack(blob)
    if magic != MAGIC or version != VERSION or dtype != 0:
        raise HsicError(f"not an HSIC v{VERSION} f32 file")
    return h, w, b, k, bool(has_wl)
