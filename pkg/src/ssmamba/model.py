"""The full classifier: stacked dual-branch blocks, feature enhancement,
pooled fusion, and the linear head.

Per block each branch runs its own Mamba block, then the enhancement module
gates both token streams with s = sigmoid(MLP((f1 + f2) / 2)), where f1 is
the spatial token of the central patch and f2 the mean spectral token.
Single-branch configurations drop the other branch and the gate entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    cross_entropy_logits,
    matmul,
    mul,
    sigmoid,
    take_row,
    tmean,
)
from .config import RunConfig
from .ssm import MambaBlockParams, init_mamba_block, mamba_block_forward
from .tokens import (
    MlpParams,
    TokenizerParams,
    TokenSeq,
    add_positional,
    apply_mlp,
    center_crop,
    init_mlp,
    init_tokenizer,
    spatial_tokenize,
    spectral_map,
    spectral_tokenize,
)

__all__ = [
    "SsBlockParams",
    "ModelParams",
    "ForwardTrace",
    "init_model",
    "enhance",
    "ss_block_forward",
    "pool_and_fuse",
    "classify",
    "cross_entropy",
    "model_forward",
    "named_params",
    "count_params",
]


@dataclass
class SsBlockParams:
    """One dual-branch block; branch and gate fields are None when disabled."""

    spa: MambaBlockParams | None
    spe: MambaBlockParams | None
    enhance_mlp: MlpParams | None

    def named(self, prefix):
        if self.spa is not None:
            yield from self.spa.named(f"{prefix}.spa")
        if self.spe is not None:
            yield from self.spe.named(f"{prefix}.spe")
        if self.enhance_mlp is not None:
            yield from self.enhance_mlp.named(f"{prefix}.enhance")


@dataclass
class ModelParams:
    tokenizer: TokenizerParams
    blocks: list
    head_w: Tensor  # (d, n_classes)
    head_b: Tensor  # (1, n_classes)
    branch_mode: str
    enhancement: bool

    @property
    def n_classes(self):
        return self.head_w.shape[1]

    def named(self):
        yield from self.tokenizer.named("tokenizer")
        for i, blk in enumerate(self.blocks):
            yield from blk.named(f"blocks.{i}")
        yield "head.w", self.head_w
        yield "head.b", self.head_b


@dataclass
class ForwardTrace:
    """Per-block token snapshots for feature inspection."""

    spatial: list = field(default_factory=list)   # one (N, d) array per block
    spectral: list = field(default_factory=list)  # one (M, d) array per block


def init_model(cfg: RunConfig, bands, n_classes, rng=None, dtype=np.float32):
    """Build parameters for the configured geometry; validates divisibility."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    spatial = cfg.branch_mode in ("spatial_only", "spectral_spatial")
    spectral = cfg.branch_mode in ("spectral_only", "spectral_spatial")
    use_enhance = cfg.enhancement and cfg.branch_mode == "spectral_spatial"
    tokenizer = init_tokenizer(
        rng,
        h=cfg.window, w=cfg.window, bands=bands,
        p_spa=cfg.p_spa, p_spe=cfg.p_spe, s_center=cfg.s_center,
        d=cfg.d, d_prime=cfg.d_prime,
        spatial=spatial, spectral=spectral, dtype=dtype,
    )
    blocks = []
    for _ in range(cfg.l_blocks):
        blocks.append(SsBlockParams(
            spa=init_mamba_block(rng, cfg.d, cfg.d_inner, cfg.n_state, cfg.k_conv, dtype)
            if spatial else None,
            spe=init_mamba_block(rng, cfg.d, cfg.d_inner, cfg.n_state, cfg.k_conv, dtype)
            if spectral else None,
            enhance_mlp=init_mlp(rng, cfg.d, cfg.d, cfg.d, dtype) if use_enhance else None,
        ))
    limit = 1.0 / np.sqrt(cfg.d)
    head_w = Tensor(rng.uniform(-limit, limit, (cfg.d, n_classes)).astype(dtype),
                    requires_grad=True)
    head_b = Tensor(np.zeros((1, n_classes), dtype=dtype), requires_grad=True)
    return ModelParams(
        tokenizer=tokenizer, blocks=blocks, head_w=head_w, head_b=head_b,
        branch_mode=cfg.branch_mode, enhancement=cfg.enhancement,
    )


def enhance(z_spa, z_spe, enhance_mlp, unit_gate=False):
    """Gate both token streams with the fused center feature.

    f1 = spatial token of the central patch (token (N+1)/2, 1-based, which
    requires an odd patch-grid side), f2 = mean spectral token,
    s = sigmoid(MLP((f1 + f2) / 2)); returns (s * z_spa, s * z_spe) with s
    broadcast across rows.  unit_gate replaces s by 1 to isolate the
    multiplicative role.
    """
    n = z_spa.shape[0]
    if n % 2 == 0:
        raise ShapeError(f"no central spatial token with an even count N={n}")
    f1 = take_row(z_spa, (n - 1) // 2)
    f2 = tmean(z_spe, axis=0)
    fused = mul(add(f1, f2), 0.5)
    if unit_gate:
        gate = Tensor(np.ones_like(fused.data))
    else:
        gate = sigmoid(apply_mlp(fused, enhance_mlp))
    return mul(z_spa, gate), mul(z_spe, gate)


def ss_block_forward(z_spa, z_spe, blk, enhancement=True, unit_gate=False):
    """One dual-branch block: per-branch Mamba, then the shared gate."""
    if blk.spa is not None:
        z_spa = mamba_block_forward(z_spa, blk.spa)
    if blk.spe is not None:
        z_spe = mamba_block_forward(z_spe, blk.spe)
    if enhancement and blk.enhance_mlp is not None and z_spa is not None and z_spe is not None:
        z_spa, z_spe = enhance(z_spa, z_spe, blk.enhance_mlp, unit_gate=unit_gate)
    return z_spa, z_spe


def pool_and_fuse(z_spa, z_spe):
    """Mean over spatial tokens plus mean over spectral tokens."""
    if z_spa is None:
        return tmean(z_spe, axis=0)
    if z_spe is None:
        return tmean(z_spa, axis=0)
    return add(tmean(z_spa, axis=0), tmean(z_spe, axis=0))


def classify(feature, head_w, head_b):
    return add(matmul(feature, head_w), head_b)


def cross_entropy(logits, label):
    """Stabilized negative log softmax of the true class; batch losses are
    averaged by the caller."""
    return cross_entropy_logits(logits, label)


def model_forward(sample, params, trace=False, unit_gate=False):
    """sample (H, W, B) -> logits (1, K), optionally with per-block snapshots."""
    tok = params.tokenizer
    z_spa = z_spe = None
    if tok.mlp_spa is not None:
        mapped = spectral_map(sample, tok)
        seq = TokenSeq(tokens=spatial_tokenize(mapped, tok), kind="spatial")
        z_spa = add_positional(seq, tok).tokens
    if tok.mlp_spe is not None:
        crop = center_crop(sample, tok.s_center)
        seq = TokenSeq(tokens=spectral_tokenize(crop, tok), kind="spectral")
        z_spe = add_positional(seq, tok).tokens
    trace_out = ForwardTrace() if trace else None
    for blk in params.blocks:
        z_spa, z_spe = ss_block_forward(
            z_spa, z_spe, blk, enhancement=params.enhancement, unit_gate=unit_gate
        )
        if trace:
            if z_spa is not None:
                trace_out.spatial.append(z_spa.data.copy())
            if z_spe is not None:
                trace_out.spectral.append(z_spe.data.copy())
    feature = pool_and_fuse(z_spa, z_spe)
    logits = classify(feature, params.head_w, params.head_b)
    return (logits, trace_out) if trace else (logits, None)


def named_params(params):
    """Canonical (name, tensor) iteration used by the optimizer, checkpoints
    and parameter counting."""
    yield from params.named()


def count_params(params):
    """Trainable scalar count per top-level module plus the total."""
    counts = {}
    for name, tensor in named_params(params):
        top = name.split(".")[0] if not name.startswith("blocks.") else ".".join(name.split(".")[:2])
        counts[top] = counts.get(top, 0) + int(np.prod(tensor.shape))
    counts["total"] = sum(v for k, v in counts.items())
    return counts
