"""Conversion manifests: what to read, what to keep, what the result must
look like.

A manifest is a JSON object:

    cube_path, gt_path        source MATLAB containers
    cube_key, gt_key          variable names (optional; largest numeric
                              array wins when omitted)
    band_keep                 0-based band indices to keep, or null for all
    class_names               K names, label value i+1 -> class_names[i]
    output                    HSIC path to write
    height, width, bands      expected output geometry (bands after keep)
    labeled_total             expected count of nonzero labels (optional)
    class_counts              expected per-class counts (optional, K ints)
    cube_sha256, gt_sha256    source checksums (optional)
    notes                     free-text provenance remarks
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass


class ManifestError(ValueError):
    pass


@dataclass
class ConversionManifest:
    cube_path: str
    gt_path: str
    output: str
    class_names: list
    height: int
    width: int
    bands: int
    cube_key: str | None = None
    gt_key: str | None = None
    band_keep: list | None = None
    labeled_total: int | None = None
    class_counts: list | None = None
    cube_sha256: str | None = None
    gt_sha256: str | None = None
    notes: str = ""

    def __post_init__(self):
        if self.band_keep is not None and len(self.band_keep) != self.bands:
            raise ManifestError(
                f"band_keep lists {len(self.band_keep)} bands but manifest "
                f"declares {self.bands}"
            )
        if self.class_counts is not None and len(self.class_counts) != len(self.class_names):
            raise ManifestError("class_counts length must equal the class count")
        if min(self.height, self.width, self.bands) < 1 or not self.class_names:
            raise ManifestError("geometry and class list must be non-empty")

    @property
    def n_classes(self):
        return len(self.class_names)


def load_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    known = set(ConversionManifest.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
    missing = {"cube_path", "gt_path", "output", "class_names",
               "height", "width", "bands"} - set(raw)
    if missing:
        raise ManifestError(f"manifest is missing: {sorted(missing)}")
    return ConversionManifest(**raw)


def sha256_of(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
