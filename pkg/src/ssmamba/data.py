"""HSI scene container, the HSIC binary format, window extraction, metrics,
classification-map rendering and synthetic benchmark generation.

HSIC layout (all little-endian):

    magic "HSIC" | u16 version=1 | u32 h, w, b, K | u8 dtype (0 = f32)
    | u8 has_wavelengths | 6 reserved bytes
    | [b x f32 wavelengths, nm]            (if has_wavelengths)
    | h*w*b x f32 reflectance, band-interleaved by pixel (pixel-major,
      pixels row-major, bands ascending within a pixel)
    | h*w x i32 labels, row-major (0 = unlabeled, 1..K = classes)
    | K x (u16 byte length + UTF-8 class name)

The file must end exactly after the last class name; anything shorter or
longer is a format error.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import RunConfig

__all__ = [
    "HsiCube",
    "HsicFormatError",
    "MetricsResult",
    "SyntheticSpec",
    "load_hsic",
    "save_hsic",
    "extract_window",
    "confusion_matrix",
    "metrics",
    "render_map",
    "make_synthetic",
    "overfit_spec",
    "joint_benchmark_spec",
    "PALETTE",
]

HSIC_MAGIC = b"HSIC"
HSIC_VERSION = 1
_HEADER = struct.Struct("<4sHIIIIBB6x")
_MAX_EXTENT = 1 << 20
_MAX_ELEMENTS = 1 << 31


class HsicFormatError(ValueError):
    """Malformed, truncated or oversized HSIC file."""


@dataclass
class HsiCube:
    """A reflectance cube with an integer label map and class metadata."""

    data: np.ndarray                 # (h, w, b) float32
    labels: np.ndarray               # (h, w) int32, 0 = unlabeled
    class_names: list
    wavelengths: np.ndarray | None = None  # (b,) float32, nm

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        if self.data.ndim != 3 or self.labels.shape != self.data.shape[:2]:
            raise ValueError("data must be (h, w, b) with labels (h, w)")
        k = len(self.class_names)
        if self.labels.min() < 0 or self.labels.max() > k:
            raise ValueError(f"labels must lie in [0, {k}]")
        for c in range(1, k + 1):
            if not (self.labels == c).any():
                raise ValueError(f"class {c} ({self.class_names[c - 1]}) has no labeled pixels")
        if self.wavelengths is not None:
            self.wavelengths = np.ascontiguousarray(self.wavelengths, dtype=np.float32)
            if self.wavelengths.shape != (self.data.shape[2],):
                raise ValueError("wavelengths must have one entry per band")

    @property
    def h(self):
        return self.data.shape[0]

    @property
    def w(self):
        return self.data.shape[1]

    @property
    def b(self):
        return self.data.shape[2]

    @property
    def n_classes(self):
        return len(self.class_names)

    def labeled_indices(self, cls=None):
        """Flat pixel ids (row*w + col) of labeled pixels, optionally one class."""
        mask = self.labels > 0 if cls is None else self.labels == cls
        return np.flatnonzero(mask.reshape(-1))


def save_hsic(cube, path):
    header = _HEADER.pack(
        HSIC_MAGIC, HSIC_VERSION, cube.h, cube.w, cube.b, cube.n_classes,
        0, 1 if cube.wavelengths is not None else 0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        if cube.wavelengths is not None:
            fh.write(cube.wavelengths.astype("<f4").tobytes())
        fh.write(cube.data.astype("<f4").tobytes())  # (h, w, b) row-major == BIP
        fh.write(cube.labels.astype("<i4").tobytes())
        for name in cube.class_names:
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise HsicFormatError(f"class name too long: {name[:32]}...")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)


def load_hsic(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise HsicFormatError("file shorter than the HSIC header")
    magic, version, h, w, b, k, dtype, has_wl = _HEADER.unpack_from(blob, 0)
    if magic != HSIC_MAGIC:
        raise HsicFormatError(f"bad magic {magic!r}")
    if version != HSIC_VERSION:
        raise HsicFormatError(f"unsupported version {version}")
    if dtype != 0:
        raise HsicFormatError(f"unknown dtype code {dtype}")
    if not all(1 <= v <= _MAX_EXTENT for v in (h, w, b)) or not 1 <= k <= _MAX_EXTENT:
        raise HsicFormatError(f"extents out of range: h={h} w={w} b={b} K={k}")
    if h * w * b > _MAX_ELEMENTS:
        raise HsicFormatError("extent overflow: cube too large")

    offset = _HEADER.size

    def take(nbytes, what):
        nonlocal offset
        if offset + nbytes > len(blob):
            raise HsicFormatError(f"truncated file while reading {what}")
        out = blob[offset : offset + nbytes]
        offset += nbytes
        return out

    wavelengths = None
    if has_wl:
        wavelengths = np.frombuffer(take(4 * b, "wavelengths"), dtype="<f4").copy()
    data = np.frombuffer(take(4 * h * w * b, "reflectance"), dtype="<f4").reshape(h, w, b).copy()
    labels = np.frombuffer(take(4 * h * w, "labels"), dtype="<i4").reshape(h, w).copy()
    names = []
    for i in range(k):
        (ln,) = struct.unpack("<H", take(2, f"class name {i} length"))
        names.append(take(ln, f"class name {i}").decode("utf-8"))
    if offset != len(blob):
        raise HsicFormatError(f"{len(blob) - offset} trailing bytes after class names")
    if labels.min() < 0 or labels.max() > k:
        raise HsicFormatError("label values outside [0, K]")
    return HsiCube(data=data, labels=labels, class_names=names, wavelengths=wavelengths)


# -- window extraction ---------------------------------------------------------


def _mirror_indices(start, count, n):
    """Reflect out-of-range indices back into [0, n) without edge duplication."""
    idx = np.arange(start, start + count)
    if n == 1:
        return np.zeros(count, dtype=np.int64)
    period = 2 * n - 2
    m = np.mod(idx, period)
    return np.where(m < n, m, period - m)


def extract_window(cube, row, col, size):
    """The size x size window centered at (row, col), mirror-padded at borders.

    Center alignment: window[(size-1)//2, (size-1)//2] == cube[row, col].
    """
    if not (0 <= row < cube.h and 0 <= col < cube.w):
        raise ValueError(f"pixel ({row}, {col}) outside the {cube.h}x{cube.w} scene")
    half = (size - 1) // 2
    rows = _mirror_indices(row - half, size, cube.h)
    cols = _mirror_indices(col - half, size, cube.w)
    return cube.data[np.ix_(rows, cols)]


# -- classification metrics ------------------------------------------------------


def confusion_matrix(y_true, y_pred, n_classes):
    """K x K counts with rows = true class, cols = predicted (1-based inputs)."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label and prediction shapes differ")
    if y_true.min() < 1 or y_true.max() > n_classes or y_pred.min() < 1 or y_pred.max() > n_classes:
        raise ValueError(f"classes must lie in [1, {n_classes}]")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true - 1, y_pred - 1), 1)
    return cm


@dataclass
class MetricsResult:
    oa: float
    aa: float
    kappa: float
    per_class: np.ndarray


def metrics(cm):
    """Overall accuracy, average accuracy and Cohen's kappa from a confusion matrix.

    oa = trace/total, per-class accuracy = diagonal/row sum, aa = their mean,
    kappa = (oa - p_e) / (1 - p_e) with p_e = sum(row_c * col_c) / total^2.
    """
    cm = np.asarray(cm, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    total = cm.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    rows = cm.sum(axis=1)
    cols = cm.sum(axis=0)
    if np.any(rows == 0):
        raise ValueError("average accuracy undefined: a true class has no samples")
    oa = np.trace(cm) / total
    per_class = np.diag(cm) / rows
    aa = per_class.mean()
    p_e = float((rows * cols).sum()) / (total * total)
    if p_e >= 1.0:
        raise ValueError("kappa undefined: expected agreement is 1")
    kappa = (oa - p_e) / (1.0 - p_e)
    return MetricsResult(oa=float(oa), aa=float(aa), kappa=float(kappa), per_class=per_class)


# -- classification-map rendering -------------------------------------------------

# Fixed 24-color palette (RGB); class c uses PALETTE[c-1], unlabeled is black.
PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
    (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
    (255, 255, 255), (165, 93, 53), (0, 100, 0), (85, 107, 47),
], dtype=np.uint8)


def render_map(cube, predictions):
    """Binary PPM (P6) bytes of an h x w class map; 0 renders black."""
    predictions = np.asarray(predictions)
    if predictions.shape != (cube.h, cube.w):
        raise ValueError(f"predictions must be ({cube.h}, {cube.w})")
    if predictions.max() > len(PALETTE):
        raise ValueError(f"palette has {len(PALETTE)} colors; got class {predictions.max()}")
    lut = np.vstack([np.zeros((1, 3), dtype=np.uint8), PALETTE])
    rgb = lut[predictions.astype(np.int64)]
    header = f"P6\n{cube.w} {cube.h}\n255\n".encode("ascii")
    return header + rgb.tobytes()


# -- synthetic benchmarks -----------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Deterministic desk-scale benchmark scene description.

    separable: the scene is a grid of square cells, each cell one class,
    class identity carried by a distinct band signature everywhere in the
    cell (plus the block layout itself).

    joint: four classes formed by (signature A or B) x (ring or plain).
    The signature difference is a small narrow-band cue painted only on the
    5x5 cell center, so every center crop of a labeled pixel sees it at
    full band resolution while it covers a sliver of the spatial window;
    the ring is a brightness annulus at Chebyshev radius 3..4 from the cell
    center, so a 3x3 center crop never sees it while a 9x9 window always
    does.  Labels cover only the 3x3 around each cell center, which keeps
    every labeled window inside its own cell.
    """

    mode: str = "separable"   # "separable" | "joint"
    classes: int = 3          # separable only; joint is always 4
    cell: int = 9
    grid: int = 3
    bands: int = 16
    noise: float = 0.0
    seed: int = 0
    cue_amp: float = 0.15     # joint: amplitude of the signature cue
    ring_amp: float = 0.6     # joint: ring brightness multiplier - 1


def _gauss_bump(bands, center, width):
    x = np.arange(bands, dtype=np.float64)
    return np.exp(-((x - center) ** 2) / (2.0 * width * width))


def make_synthetic(spec):
    """Build the deterministic cube described by spec."""
    if spec.mode == "separable":
        return _make_separable(spec)
    if spec.mode == "joint":
        return _make_joint(spec)
    raise ValueError(f"unknown synthetic mode {spec.mode!r}")


def _make_separable(spec):
    rng = np.random.default_rng(spec.seed)
    side = spec.cell * spec.grid
    signatures = np.empty((spec.classes, spec.bands))
    for c in range(spec.classes):
        center = (c + 0.5) * spec.bands / spec.classes
        signatures[c] = 0.3 + 0.7 * _gauss_bump(spec.bands, center, spec.bands / (3.0 * spec.classes))
    data = np.empty((side, side, spec.bands), dtype=np.float64)
    labels = np.zeros((side, side), dtype=np.int32)
    for r in range(spec.grid):
        for c in range(spec.grid):
            cls = (r * spec.grid + c) % spec.classes
            sl = np.s_[r * spec.cell : (r + 1) * spec.cell, c * spec.cell : (c + 1) * spec.cell]
            data[sl] = signatures[cls]
            labels[sl] = cls + 1
    if spec.noise > 0:
        data = data + rng.normal(0.0, spec.noise, data.shape)
    names = [f"material_{c + 1}" for c in range(spec.classes)]
    return HsiCube(data=data.astype(np.float32), labels=labels, class_names=names)


def _make_joint(spec):
    rng = np.random.default_rng(spec.seed)
    side = spec.cell * spec.grid
    half = spec.cell // 2
    base = 0.4 + 0.5 * _gauss_bump(spec.bands, 0.6 * spec.bands, spec.bands / 5.0)
    # overlapping same-sign bumps: telling them apart needs band-shape
    # resolution, which survives the center crop but dilutes through the
    # spatial branch's shared per-pixel mapping
    cue_a = spec.cue_amp * _gauss_bump(spec.bands, 2.0, 1.2)
    cue_b = spec.cue_amp * _gauss_bump(spec.bands, 5.0, 1.2)
    data = np.empty((side, side, spec.bands), dtype=np.float64)
    labels = np.zeros((side, side), dtype=np.int32)
    # within one cell: the cue lives on the 5x5 center, the ring at
    # Chebyshev radius 3..4 from the cell center
    rr, cc = np.meshgrid(np.arange(spec.cell), np.arange(spec.cell), indexing="ij")
    cheb = np.maximum(np.abs(rr - half), np.abs(cc - half))
    ring = (cheb >= 3) & (cheb <= 4)
    cue_region = cheb <= 2
    for r in range(spec.grid):
        for c in range(spec.grid):
            cell_id = r * spec.grid + c
            sig_group = cell_id % 2          # 0 -> cue A, 1 -> cue B
            has_ring = (cell_id // 2) % 2    # alternate ring/plain
            cls = 2 * sig_group + has_ring + 1
            block = np.broadcast_to(base, (spec.cell, spec.cell, spec.bands)).copy()
            block[cue_region] += cue_b if sig_group else cue_a
            if has_ring:
                block[ring] *= 1.0 + spec.ring_amp
            sl = np.s_[r * spec.cell : (r + 1) * spec.cell, c * spec.cell : (c + 1) * spec.cell]
            data[sl] = block
            lab = np.zeros((spec.cell, spec.cell), dtype=np.int32)
            lab[half - 1 : half + 2, half - 1 : half + 2] = cls
            labels[sl] = lab
    if spec.noise > 0:
        data = data + rng.normal(0.0, spec.noise, data.shape)
    names = ["sigA-plain", "sigA-ring", "sigB-plain", "sigB-ring"]
    return HsiCube(data=data.astype(np.float32), labels=labels, class_names=names)


def overfit_spec():
    """The noise-free 3-class scene used by the optimization sanity check."""
    return SyntheticSpec(mode="separable", classes=3, cell=9, grid=3, bands=16,
                         noise=0.0, seed=7)


def joint_benchmark_spec():
    """The shipped joint spectral-spatial benchmark (fixed seed)."""
    return SyntheticSpec(mode="joint", cell=11, grid=6, bands=16,
                         noise=0.12, seed=42, cue_amp=0.14, ring_amp=0.6)


def overfit_config():
    """Training configuration paired with overfit_spec()."""
    return RunConfig(window=9, p_spa=3, p_spe=2, d=16, d_prime=8, l_blocks=1,
                     s_center=3, n_state=8, expand=2, k_conv=4,
                     lr0=5e-3, lr_halve_every=80, epochs=100, batch_size=256,
                     seed=0, train_per_class=20)


def joint_benchmark_config(branch_mode="spectral_spatial", enhancement=True, seed=0):
    """Training configuration paired with joint_benchmark_spec()."""
    return RunConfig(window=9, p_spa=3, p_spe=2, d=16, d_prime=8, l_blocks=1,
                     s_center=3, n_state=8, expand=2, k_conv=4,
                     lr0=5e-3, lr_halve_every=80, epochs=100, batch_size=64,
                     seed=seed, train_per_class=30,
                     branch_mode=branch_mode, enhancement=enhancement)
