"""Multi-head attention kernels.

Three flavors are built on one scaled-dot-product kernel: masked self-attention
with a one-way reference-to-video mask, cross-attention over a conditioning
memory, and an emphasize stage where video tokens query reference tokens and
the reference slice passes through untouched. Blocked entries are masked with
additive -inf before the softmax so the surviving rows stay normalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, MaskError, ShapeError
from .rope import RopeConfig, TokenPosition, rotation_tables, rotate_with_tables
from .tensor import (
    Tensor,
    concat,
    matmul,
    reshape,
    slice_axis,
    softmax_lastdim,
    transpose,
)


@dataclass
class AttentionProjections:
    # No key bias: a constant shift of every key cancels in the softmax, so
    # the parameter would be pure dead weight with an identically-zero gradient.
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bv: Tensor
    bo: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.{name}": getattr(self, name)
            for name in ("wq", "wk", "wv", "wo", "bq", "bv", "bo")
        }


@dataclass
class MultiHeadConfig:
    model_dim: int
    n_heads: int
    params: AttentionProjections

    def __post_init__(self):
        if self.model_dim % self.n_heads:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads

    @classmethod
    def create(cls, model_dim: int, n_heads: int, rng, zero_out_proj: bool = True):
        """Fresh projections; the output projection starts at zero so a residual
        branch built on this kernel is inert at init."""
        s = 1.0 / np.sqrt(model_dim)

        def w():
            return Tensor(rng.normal((model_dim, model_dim)) * s, requires_grad=True)

        def b():
            return Tensor(np.zeros(model_dim), requires_grad=True)

        wo = (
            Tensor(np.zeros((model_dim, model_dim)), requires_grad=True)
            if zero_out_proj
            else w()
        )
        params = AttentionProjections(w(), w(), w(), wo, b(), b(), b())
        return cls(model_dim=model_dim, n_heads=n_heads, params=params)


@dataclass(frozen=True)
class TokenSplit:
    """Layout rule: reference tokens occupy indices [0, n_ref_tokens)."""

    n_ref_tokens: int
    n_vid_tokens: int

    def __post_init__(self):
        if self.n_ref_tokens <= 0 or self.n_vid_tokens <= 0:
            raise ConfigError(
                f"both token segments must be non-empty, got "
                f"({self.n_ref_tokens}, {self.n_vid_tokens})"
            )

    @property
    def total(self) -> int:
        return self.n_ref_tokens + self.n_vid_tokens


class AttentionMask:
    """Dense allow/block matrix over (query token, key token)."""

    def __init__(self, allow: np.ndarray):
        allow = np.asarray(allow, dtype=bool)
        if allow.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {allow.shape}")
        if not allow.any(axis=1).all():
            raise MaskError("mask has a query row with every key blocked")
        self.allow = allow
        # Additive form: 0 where allowed, -inf where blocked.
        self.additive = np.where(allow, 0.0, -np.inf)

    @property
    def shape(self) -> tuple[int, int]:
        return self.allow.shape


def build_ref_video_mask(split: TokenSplit) -> AttentionMask:
    """Block (reference query, video key) entries; everything else is allowed.

    Video tokens may attend everywhere; reference tokens only see each other,
    so information flows one way from the reference segment into the video.
    """
    n = split.total
    allow = np.ones((n, n), dtype=bool)
    allow[: split.n_ref_tokens, split.n_ref_tokens :] = False
    return AttentionMask(allow)


def _heads_first(t: Tensor) -> Tensor:
    perm = list(range(t.ndim))
    perm[-3], perm[-2] = perm[-2], perm[-3]
    return transpose(t, perm)


def multi_head_attention(
    q_in: Tensor,
    kv_in: Tensor,
    cfg: MultiHeadConfig,
    mask: Optional[AttentionMask] = None,
    rope_q: Optional[tuple[np.ndarray, np.ndarray]] = None,
    rope_k: Optional[tuple[np.ndarray, np.ndarray]] = None,
    rope_v: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> Tensor:
    """Scaled dot-product attention, queries from q_in, keys/values from kv_in.

    rope_q / rope_k / rope_v are precomputed (cos, sin) tables applied after
    the head split. Blocked entries contribute exactly zero weight.
    """
    d = cfg.model_dim
    if q_in.shape[-1] != d or kv_in.shape[-1] != d:
        raise ShapeError(
            f"attention inputs must end in model_dim {d}: {q_in.shape}, {kv_in.shape}"
        )
    if mask is not None and mask.shape != (q_in.shape[-2], kv_in.shape[-2]):
        raise ShapeError(
            f"mask shape {mask.shape} does not cover "
            f"({q_in.shape[-2]}, {kv_in.shape[-2]}) tokens"
        )
    p = cfg.params
    h, hd = cfg.n_heads, cfg.head_dim
    q = matmul(q_in, p.wq) + p.bq
    k = matmul(kv_in, p.wk)
    v = matmul(kv_in, p.wv) + p.bv
    q = reshape(q, q.shape[:-1] + (h, hd))
    k = reshape(k, k.shape[:-1] + (h, hd))
    v = reshape(v, v.shape[:-1] + (h, hd))
    if rope_q is not None:
        q = rotate_with_tables(q, *rope_q)
    if rope_k is not None:
        k = rotate_with_tables(k, *rope_k)
    if rope_v is not None:
        v = rotate_with_tables(v, *rope_v)
    q = _heads_first(q)  # [.., heads, Tq, hd]
    k = _heads_first(k)
    v = _heads_first(v)
    kt = transpose(k, list(range(k.ndim - 2)) + [k.ndim - 1, k.ndim - 2])
    scores = matmul(q, kt) * (1.0 / np.sqrt(hd))
    if mask is not None:
        scores = scores + Tensor(mask.additive)
    weights = softmax_lastdim(scores)
    ctx = matmul(weights, v)  # [.., heads, Tq, hd]
    ctx = _heads_first(ctx)  # [.., Tq, heads, hd]
    ctx = reshape(ctx, ctx.shape[:-2] + (d,))
    return matmul(ctx, p.wo) + p.bo


def masked_self_attention(
    x: Tensor,
    split: TokenSplit,
    cfg: MultiHeadConfig,
    rope_cfg: RopeConfig,
    positions: Sequence[TokenPosition],
    x_normed: Optional[Tensor] = None,
    mask_enabled: bool = True,
) -> Tensor:
    """Self-attention with the one-way reference->video mask and a residual.

    Queries/keys are rotated by the gapped rotary embedding. `x_normed`, when
    given, feeds the attention while the residual adds onto the raw `x`
    (pre-norm block convention).
    """
    n = x.shape[-2]
    if split.total != n:
        raise ShapeError(f"split {split} does not cover {n} tokens")
    if len(positions) != n:
        raise ShapeError(f"{len(positions)} positions for {n} tokens")
    src = x_normed if x_normed is not None else x
    tables = rotation_tables(positions, rope_cfg)
    mask = build_ref_video_mask(split) if mask_enabled else None
    attn = multi_head_attention(
        src,
        src,
        cfg,
        mask=mask,
        rope_q=tables,
        rope_k=tables,
        rope_v=tables if rope_cfg.rotate_values else None,
    )
    return x + attn


def cross_attention(
    x: Tensor,
    memory: Tensor,
    cfg: MultiHeadConfig,
    x_normed: Optional[Tensor] = None,
) -> Tensor:
    """Queries from x, keys/values from the conditioning memory, residual added."""
    if memory.shape[-2] == 0:
        raise ConfigError("cross-attention needs a non-empty memory")
    src = x_normed if x_normed is not None else x
    return x + multi_head_attention(src, memory, cfg)


def emphasize_attention(
    x: Tensor,
    split: TokenSplit,
    cfg: MultiHeadConfig,
    x_normed: Optional[Tensor] = None,
    rope_pack: Optional[tuple[Sequence[TokenPosition], RopeConfig]] = None,
) -> Tensor:
    """Video tokens query the reference tokens; the reference slice passes through.

    Output = concat(ref slice of x, vid slice of x + attn(Q=vid, K=ref, V=ref)),
    so the reference rows of the result are byte-identical to the input. Rotary
    rotation is off by default here; pass `rope_pack` to enable it.
    """
    n = x.shape[-2]
    if split.total != n:
        raise ShapeError(f"split {split} does not cover {n} tokens")
    nr = split.n_ref_tokens
    src = x_normed if x_normed is not None else x
    vid_q = slice_axis(src, -2, nr, n)
    ref_kv = slice_axis(src, -2, 0, nr)
    rope_q = rope_k = None
    if rope_pack is not None:
        positions, rope_cfg = rope_pack
        rope_q = rotation_tables(positions[nr:], rope_cfg)
        rope_k = rotation_tables(positions[:nr], rope_cfg)
    attn = multi_head_attention(vid_q, ref_kv, cfg, rope_q=rope_q, rope_k=rope_k)
    ref_out = slice_axis(x, -2, 0, nr)
    vid_out = slice_axis(x, -2, nr, n) + attn
    return concat([ref_out, vid_out], axis=-2)
