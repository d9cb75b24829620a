"""Turn an HxWxB sample into spatial and spectral token sequences.

Spatial route: per-pixel spectral mapping (MLP over the band axis), then
partition of the HxW grid into non-overlapping P_spa x P_spa patches,
flatten, project to D.  Spectral route: center SxS crop, per-band spatial
mapping (MLP over the S^2 pixels), grouping of P_spe consecutive bands,
project to D.  Patch order is row-major over the grid, pixel order row-major
within a patch, bands ascending; the feature-enhancement center index
depends on these orderings, so they are fixed here and nowhere else.

Both sequences receive fixed (non-learned) sinusoidal position tables: a
1-D table over token index for the spectral sequence and a concatenated
row/column table over the patch grid for the spatial one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, add, gather_concat_rows, matmul, silu

__all__ = [
    "MlpParams",
    "TokenizerParams",
    "TokenSeq",
    "init_mlp",
    "apply_mlp",
    "init_tokenizer",
    "spectral_map",
    "spatial_tokenize",
    "center_crop",
    "spectral_tokenize",
    "add_positional",
    "sinusoidal_table_1d",
    "sinusoidal_table_2d",
    "spatial_patch_index",
    "band_group_index",
]


@dataclass
class MlpParams:
    """Two-layer perceptron: Linear -> silu -> Linear."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix):
        for key in ("w1", "b1", "w2", "b2"):
            yield f"{prefix}.{key}", getattr(self, key)


def init_mlp(rng, d_in, d_hidden, d_out, dtype=np.float32):
    def uniform(shape, fan_in):
        limit = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-limit, limit, shape).astype(dtype), requires_grad=True)

    return MlpParams(
        w1=uniform((d_in, d_hidden), d_in),
        b1=Tensor(np.zeros((1, d_hidden), dtype=dtype), requires_grad=True),
        w2=uniform((d_hidden, d_out), d_hidden),
        b2=Tensor(np.zeros((1, d_out), dtype=dtype), requires_grad=True),
    )


def apply_mlp(x, params):
    hidden = silu(add(matmul(x, params.w1), params.b1))
    return add(matmul(hidden, params.w2), params.b2)


@dataclass
class TokenSeq:
    """A token matrix plus which branch it belongs to."""

    tokens: Tensor
    kind: str  # "spatial" | "spectral"
    pos_applied: bool = False

    @property
    def count(self):
        return self.tokens.shape[0]


@dataclass
class TokenizerParams:
    h: int
    w: int
    bands: int
    p_spa: int
    p_spe: int
    s_center: int
    d: int
    d_prime: int
    mlp_spa: MlpParams | None  # bands -> d_prime, distinct from mlp_spe
    mlp_spe: MlpParams | None  # s_center^2 -> d_prime
    e_spa: Tensor | None       # (p_spa^2 * d_prime, d)
    e_spe: Tensor | None       # (p_spe * d_prime, d)
    pos_spa: np.ndarray | None  # (N, d) fixed table
    pos_spe: np.ndarray | None  # (M, d) fixed table
    spa_index: np.ndarray | None  # (N, p_spa^2) pixel ids per patch
    spe_index: np.ndarray | None  # (M, p_spe) band ids per group

    def named(self, prefix):
        if self.mlp_spa is not None:
            yield from self.mlp_spa.named(f"{prefix}.mlp_spa")
            yield f"{prefix}.e_spa", self.e_spa
        if self.mlp_spe is not None:
            yield from self.mlp_spe.named(f"{prefix}.mlp_spe")
            yield f"{prefix}.e_spe", self.e_spe


def spatial_patch_index(h, w, p):
    """Pixel ids (row*w + col) of each patch, patches and pixels row-major."""
    if h % p or w % p:
        raise ShapeError(f"grid {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    idx = np.empty((gh * gw, p * p), dtype=np.int64)
    for r in range(gh):
        for c in range(gw):
            rows = np.arange(r * p, (r + 1) * p)
            cols = np.arange(c * p, (c + 1) * p)
            idx[r * gw + c] = (rows[:, None] * w + cols[None, :]).reshape(-1)
    return idx


def band_group_index(bands, p):
    """Band ids of each spectral group, ascending band order."""
    if bands % p:
        raise ShapeError(f"{bands} bands not divisible by group size {p}")
    return np.arange(bands, dtype=np.int64).reshape(bands // p, p)


def sinusoidal_table_1d(count, d):
    """Interleaved sin/cos table over token index, values in [-1, 1]."""
    pos = np.arange(count, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def sinusoidal_table_2d(grid_h, grid_w, d):
    """Concatenated row/column sinusoids over a patch grid; d must be even."""
    if d % 2:
        raise ShapeError("2-D positional table needs an even token dimension")
    half = d // 2
    row_tab = sinusoidal_table_1d(grid_h, half)
    col_tab = sinusoidal_table_1d(grid_w, half)
    table = np.empty((grid_h * grid_w, d), dtype=np.float64)
    for r in range(grid_h):
        for c in range(grid_w):
            table[r * grid_w + c, :half] = row_tab[r]
            table[r * grid_w + c, half:] = col_tab[c]
    return table


def init_tokenizer(rng, *, h, w, bands, p_spa, p_spe, s_center, d, d_prime,
                   spatial=True, spectral=True, dtype=np.float32):
    if spatial and (h % p_spa or w % p_spa):
        raise ShapeError(f"window {h}x{w} not divisible by p_spa={p_spa}")
    if spectral and bands % p_spe:
        raise ShapeError(f"{bands} bands not divisible by p_spe={p_spe}")
    if spectral and (s_center % 2 == 0 or s_center > min(h, w)):
        raise ShapeError(f"center crop size {s_center} must be odd and fit {h}x{w}")

    def uniform(shape, fan_in):
        limit = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-limit, limit, shape).astype(dtype), requires_grad=True)

    mlp_spa = e_spa = pos_spa = spa_index = None
    mlp_spe = e_spe = pos_spe = spe_index = None
    if spatial:
        mlp_spa = init_mlp(rng, bands, d_prime, d_prime, dtype)
        e_spa = uniform((p_spa * p_spa * d_prime, d), p_spa * p_spa * d_prime)
        spa_index = spatial_patch_index(h, w, p_spa)
        pos_spa = sinusoidal_table_2d(h // p_spa, w // p_spa, d).astype(dtype)
    if spectral:
        mlp_spe = init_mlp(rng, s_center * s_center, d_prime, d_prime, dtype)
        e_spe = uniform((p_spe * d_prime, d), p_spe * d_prime)
        spe_index = band_group_index(bands, p_spe)
        pos_spe = sinusoidal_table_1d(bands // p_spe, d).astype(dtype)
    return TokenizerParams(
        h=h, w=w, bands=bands, p_spa=p_spa, p_spe=p_spe, s_center=s_center,
        d=d, d_prime=d_prime,
        mlp_spa=mlp_spa, mlp_spe=mlp_spe, e_spa=e_spa, e_spe=e_spe,
        pos_spa=pos_spa, pos_spe=pos_spe,
        spa_index=spa_index, spe_index=spe_index,
    )


def spectral_map(sample, params):
    """Per-pixel band mapping: HxWxB -> (HW, d_prime)."""
    sample = np.asarray(sample)
    if sample.ndim != 3 or sample.shape != (params.h, params.w, params.bands):
        raise ShapeError(
            f"sample shape {sample.shape} does not match tokenizer "
            f"({params.h}, {params.w}, {params.bands})"
        )
    flat = Tensor(np.ascontiguousarray(sample.reshape(-1, params.bands), dtype=params.e_spa.dtype
                                       if params.e_spa is not None else np.float32))
    return apply_mlp(flat, params.mlp_spa)


def spatial_tokenize(mapped, params):
    """Partition into patches, flatten, project: (HW, d_prime) -> (N, d)."""
    if mapped.shape != (params.h * params.w, params.d_prime):
        raise ShapeError(f"mapped shape {mapped.shape} inconsistent with tokenizer")
    patches = gather_concat_rows(mapped, params.spa_index)
    return matmul(patches, params.e_spa)


def center_crop(sample, s):
    """The odd SxS window centered on pixel ((H-1)//2, (W-1)//2)."""
    sample = np.asarray(sample)
    h, w = sample.shape[0], sample.shape[1]
    if s % 2 == 0 or s > min(h, w):
        raise ShapeError(f"crop size {s} must be odd and no larger than {h}x{w}")
    r0 = (h - 1) // 2 - (s - 1) // 2
    c0 = (w - 1) // 2 - (s - 1) // 2
    return sample[r0 : r0 + s, c0 : c0 + s]


def spectral_tokenize(crop, params):
    """Per-band pixel mapping then band grouping: SxSxB -> (M, d)."""
    crop = np.asarray(crop)
    s = params.s_center
    if crop.shape != (s, s, params.bands):
        raise ShapeError(f"crop shape {crop.shape}, expected ({s}, {s}, {params.bands})")
    # band rows, pixels row-major within each row
    per_band = np.ascontiguousarray(crop.transpose(2, 0, 1).reshape(params.bands, s * s))
    mapped = apply_mlp(Tensor(per_band.astype(params.e_spe.dtype)), params.mlp_spe)
    groups = gather_concat_rows(mapped, params.spe_index)
    return matmul(groups, params.e_spe)


def add_positional(seq, params):
    """Add the fixed table for seq.kind; refuses a second application."""
    if seq.pos_applied:
        raise ValueError("positional table already applied to this sequence")
    table = params.pos_spa if seq.kind == "spatial" else params.pos_spe
    if table.shape != seq.tokens.shape:
        raise ShapeError(f"positional table {table.shape} vs tokens {seq.tokens.shape}")
    out = add(seq.tokens, Tensor(table))
    return TokenSeq(tokens=out, kind=seq.kind, pos_applied=True)
