"""Conversion and verification against a manifest."""

from __future__ import annotations

import os

import numpy as np

from .hsic import read_header, read_hsic, write_hsic
from .manifest import sha256_of
from .matreader import load_mat_array, orient_cube, orient_labels


class ConversionError(ValueError):
    pass


def _check_sources(manifest):
    for path, expected in ((manifest.cube_path, manifest.cube_sha256),
                           (manifest.gt_path, manifest.gt_sha256)):
        if not os.path.exists(path):
            raise FileNotFoundError(f"source file not found: {path}")
        if expected:
            got = sha256_of(path)
            if got != expected.lower():
                raise ConversionError(f"{path}: sha256 {got} != manifest {expected}")


def load_sources(manifest):
    """Oriented (cube, labels) from the manifest's MATLAB containers."""
    _check_sources(manifest)
    raw_bands = manifest.bands if manifest.band_keep is None else None
    cube = load_mat_array(manifest.cube_path, manifest.cube_key)
    cube = np.squeeze(cube)
    if cube.ndim != 3:
        raise ConversionError(f"cube is not 3-D: shape {cube.shape}")
    if raw_bands is None:
        # band count before filtering is whatever axis is left over
        candidates = [s for s in cube.shape
                      if s not in (manifest.height, manifest.width)]
        raw_bands = candidates[0] if len(candidates) == 1 else cube.shape[-1]
    cube = orient_cube(cube, manifest.height, manifest.width, raw_bands)
    labels = orient_labels(load_mat_array(manifest.gt_path, manifest.gt_key),
                           manifest.height, manifest.width)
    return cube, labels


def convert(manifest, report=print):
    """Write the manifest's HSIC output; returns per-class labeled counts."""
    cube, labels = load_sources(manifest)
    if manifest.band_keep is not None:
        keep = np.asarray(manifest.band_keep, dtype=np.int64)
        if keep.min() < 0 or keep.max() >= cube.shape[2]:
            raise ConversionError(
                f"band_keep index out of range for {cube.shape[2]} source bands"
            )
        cube = cube[:, :, keep]
    if cube.shape != (manifest.height, manifest.width, manifest.bands):
        raise ConversionError(
            f"converted geometry {cube.shape} does not match manifest "
            f"({manifest.height}, {manifest.width}, {manifest.bands})"
        )
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() > manifest.n_classes:
        raise ConversionError(
            f"label values span [{labels.min()}, {labels.max()}], expected "
            f"[0, {manifest.n_classes}]"
        )
    counts = [int((labels == c).sum()) for c in range(1, manifest.n_classes + 1)]
    if 0 in counts:
        empty = manifest.class_names[counts.index(0)]
        raise ConversionError(f"class {empty!r} has no labeled pixels")
    write_hsic(manifest.output, cube.astype(np.float32), labels, manifest.class_names)
    width = max(len(n) for n in manifest.class_names)
    report(f"wrote {manifest.output}: "
           f"{manifest.height}x{manifest.width}x{manifest.bands}, "
           f"{manifest.n_classes} classes")
    for name, count in zip(manifest.class_names, counts):
        report(f"  {name:<{width}} {count:>8}")
    report(f"  {'total labeled':<{width}} {sum(counts):>8}")
    return counts


def verify(hsic_path, manifest, report=print):
    """Check an HSIC file against the manifest; returns a list of problems."""
    problems = []
    h, w, b, k, _ = read_header(hsic_path)
    if (h, w, b) != (manifest.height, manifest.width, manifest.bands):
        problems.append(f"geometry {h}x{w}x{b} != manifest "
                        f"{manifest.height}x{manifest.width}x{manifest.bands}")
    if k != manifest.n_classes:
        problems.append(f"class count {k} != manifest {manifest.n_classes}")
    data, labels, names, _ = read_hsic(hsic_path)
    if not np.all(np.isfinite(data)):
        problems.append("reflectance contains NaN or Inf")
    if names != list(manifest.class_names):
        problems.append("class names differ from the manifest")
    counts = [int((labels == c).sum()) for c in range(1, manifest.n_classes + 1)]
    if manifest.class_counts is not None:
        for name, got, expected in zip(manifest.class_names, counts, manifest.class_counts):
            if got != expected:
                problems.append(f"class {name!r}: {got} labeled pixels, expected {expected}")
    if manifest.labeled_total is not None and sum(counts) != manifest.labeled_total:
        problems.append(f"labeled total {sum(counts)} != manifest {manifest.labeled_total}")
    if problems:
        for p in problems:
            report(f"MISMATCH: {p}")
    else:
        report(f"{hsic_path}: all checks passed "
               f"({sum(counts)} labeled pixels over {k} classes)")
    return problems
