"""The reference-conditioned video DiT.

Token layout is one clean reference-frame latent slice followed by f_v noisy
video-frame latent slices. Each block runs masked self-attention (one-way
reference->video flow, gapped rotary embedding), cross-attention over prompt +
semantic memory, an emphasize stage (video queries reference, reference passes
through), and a feed-forward, all pre-norm with adaptive shift/scale from the
timestep embedding. Two zero-initialized heads emit the reconstructed
reference latent (as a delta over the clean input) and the noise prediction,
so a fresh model is exactly the identity pair (ref_latent, 0).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attention import (
    MultiHeadConfig,
    TokenSplit,
    cross_attention,
    emphasize_attention,
    masked_self_attention,
)
from .data import default_vocab
from .errors import ConfigError, ShapeError, VocabError
from .rope import RopeConfig, TokenPosition
from .tensor import (
    RngState,
    Tensor,
    concat,
    embedding,
    gelu,
    layernorm,
    matmul,
    reshape,
    slice_axis,
    transpose,
)


@dataclass
class ModelConfig:
    height: int = 32
    width: int = 32
    frames: int = 8
    patch_size: int = 8
    model_dim: int = 64
    n_heads: int = 4
    depth: int = 2
    time_dim: int = 64
    semantic_kernels: tuple[int, ...] = (4, 2, 2)
    semantic_channels: tuple[int, ...] = (16, 32)
    vocab: tuple[str, ...] = field(default_factory=default_vocab)
    theta_base: float = 10000.0
    gap_beta: int = 4
    rope_dim_split: Optional[tuple[int, int, int]] = None
    rotate_values: bool = False
    emphasize_rope: bool = False
    mask_enabled: bool = True
    emphasize_enabled: bool = True
    use_first_frame_prompt: bool = True
    schedule_kind: str = "cosine"
    timesteps: int = 200

    def __post_init__(self):
        self.vocab = tuple(self.vocab)
        self.semantic_kernels = tuple(self.semantic_kernels)
        self.semantic_channels = tuple(self.semantic_channels)
        if self.rope_dim_split is not None:
            self.rope_dim_split = tuple(self.rope_dim_split)
        p = self.patch_size
        if self.height % p or self.width % p:
            raise ConfigError(
                f"image {self.height}x{self.width} not divisible by patch {p}"
            )
        if self.model_dim % self.n_heads:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}"
            )
        if len(self.semantic_channels) != len(self.semantic_kernels) - 1:
            raise ConfigError("semantic_channels must have one entry per hidden layer")
        sem_stride = int(np.prod(self.semantic_kernels))
        if self.height % sem_stride or self.width % sem_stride:
            raise ConfigError(
                f"semantic kernels {self.semantic_kernels} do not tile "
                f"{self.height}x{self.width}"
            )
        # Instantiating the rope config validates head_dim / dim_split early.
        _ = self.rope_config

    # --- derived sizes ---------------------------------------------------
    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads

    @property
    def latent_channels(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def grid_h(self) -> int:
        return self.height // self.patch_size

    @property
    def grid_w(self) -> int:
        return self.width // self.patch_size

    @property
    def n_ref_tokens(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def n_vid_tokens(self) -> int:
        return self.frames * self.grid_h * self.grid_w

    @property
    def n_semantic_tokens(self) -> int:
        s = int(np.prod(self.semantic_kernels))
        return (self.height // s) * (self.width // s)

    @property
    def rope_config(self) -> RopeConfig:
        return RopeConfig(
            head_dim=self.head_dim,
            dim_split=self.rope_dim_split,
            theta_base=self.theta_base,
            beta=self.gap_beta,
            rotate_values=self.rotate_values,
        )

    @property
    def ref_latent_shape(self) -> tuple[int, int]:
        return (self.n_ref_tokens, self.latent_channels)

    @property
    def video_latent_shape(self) -> tuple[int, int]:
        return (self.n_vid_tokens, self.latent_channels)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["vocab"] = list(self.vocab)
        d["semantic_kernels"] = list(self.semantic_kernels)
        d["semantic_channels"] = list(self.semantic_channels)
        if self.rope_dim_split is not None:
            d["rope_dim_split"] = list(self.rope_dim_split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        kw = {k: v for k, v in d.items() if k in known}
        for key in ("vocab", "semantic_kernels", "semantic_channels", "rope_dim_split"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)


@dataclass
class LatentSequence:
    """Reference tokens first, then video tokens, with per-token positions."""

    tokens: Tensor  # [.., n_tokens, model_dim]
    positions: list[TokenPosition]
    split: TokenSplit

    def __post_init__(self):
        if len(self.positions) != self.split.total:
            raise ShapeError(
                f"{len(self.positions)} positions for split of {self.split.total}"
            )
        if self.tokens.shape[-2] != self.split.total:
            raise ShapeError(
                f"tokens cover {self.tokens.shape[-2]} rows, split says {self.split.total}"
            )


@dataclass
class ConditioningMemory:
    """Cross-attention memory; concatenation order is first ++ later ++ semantic."""

    first_frame_tokens: Optional[Tensor]
    later_frame_tokens: Tensor
    semantic_tokens: Tensor

    def tokens(self) -> Tensor:
        parts = [
            t
            for t in (self.first_frame_tokens, self.later_frame_tokens, self.semantic_tokens)
            if t is not None
        ]
        return concat(parts, axis=-2)


def build_layout(cfg: ModelConfig) -> tuple[list[TokenPosition], TokenSplit]:
    """Token positions: reference patches at frame 0 / group 0, then video."""
    positions = [
        TokenPosition(frame_index=0, y=y, x=x, group_flag=0)
        for y in range(cfg.grid_h)
        for x in range(cfg.grid_w)
    ]
    for f in range(cfg.frames):
        positions += [
            TokenPosition(frame_index=f, y=y, x=x, group_flag=1)
            for y in range(cfg.grid_h)
            for x in range(cfg.grid_w)
        ]
    return positions, TokenSplit(cfg.n_ref_tokens, cfg.n_vid_tokens)


# --- patch codec -----------------------------------------------------------------


def dct_matrix(p: int) -> np.ndarray:
    """Orthonormal DCT-II matrix of size p x p."""
    n = np.arange(p)
    k = n[:, None]
    d = np.cos(np.pi * (2 * n[None, :] + 1) * k / (2 * p))
    d[0] *= np.sqrt(1.0 / p)
    d[1:] *= np.sqrt(2.0 / p)
    return d


class PatchCodec:
    """Invertible orthonormal map between images and per-patch latents.

    Non-overlapping p x p patches are projected onto a 2D DCT basis per
    channel; `decode` is the exact inverse and both directions are isometries.
    """

    def __init__(self, height: int, width: int, patch: int):
        if height % patch or width % patch:
            raise ShapeError(f"{height}x{width} not divisible by patch {patch}")
        self.height, self.width, self.patch = height, width, patch
        d = dct_matrix(patch)
        self.basis = Tensor(np.kron(d, d))  # [p^2, p^2], orthonormal

    @property
    def grid(self) -> tuple[int, int]:
        return (self.height // self.patch, self.width // self.patch)

    def encode(self, x: Tensor) -> Tensor:
        """[..., H, W, 3] -> [..., gh*gw, 3*p^2]."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        p = self.patch
        gh, gw = self.grid
        if x.shape[-3:] != (self.height, self.width, 3):
            raise ShapeError(f"expected [..., {self.height}, {self.width}, 3], got {x.shape}")
        lead = x.shape[:-3]
        n = len(lead)
        x = reshape(x, lead + (gh, p, gw, p, 3))
        x = transpose(x, tuple(range(n)) + (n, n + 2, n + 4, n + 1, n + 3))
        x = reshape(x, lead + (gh * gw, 3, p * p))
        kt = transpose(self.basis, (1, 0))
        x = matmul(x, kt)  # coeffs = vec @ K^T
        return reshape(x, lead + (gh * gw, 3 * p * p))

    def decode(self, lat: Tensor) -> Tensor:
        """[..., F*gh*gw, 3*p^2] -> [..., F, H, W, 3]."""
        lat = lat if isinstance(lat, Tensor) else Tensor(lat)
        p = self.patch
        gh, gw = self.grid
        c = 3 * p * p
        if lat.shape[-1] != c or lat.shape[-2] % (gh * gw):
            raise ShapeError(f"latent shape {lat.shape} does not tile {gh}x{gw} patches")
        frames = lat.shape[-2] // (gh * gw)
        lead = lat.shape[:-2]
        n = len(lead)
        x = reshape(lat, lead + (frames * gh * gw, 3, p * p))
        x = matmul(x, self.basis)  # vec = coeffs @ K
        x = reshape(x, lead + (frames, gh, gw, 3, p, p))
        x = transpose(x, tuple(range(n)) + (n, n + 1, n + 4, n + 2, n + 5, n + 3))
        return reshape(x, lead + (frames, self.height, self.width, 3))

    def decode_image(self, lat: Tensor) -> Tensor:
        """[..., gh*gw, 3*p^2] -> [..., H, W, 3] (single frame)."""
        out = self.decode(lat)
        lead = out.shape[:-4]
        return reshape(out, lead + out.shape[-3:])


def encode_latent(image_or_video, height: int, width: int, patch: int) -> Tensor:
    """One-shot functional form of PatchCodec.encode."""
    return PatchCodec(height, width, patch).encode(image_or_video)


def decode_latent(lat, height: int, width: int, patch: int) -> Tensor:
    """One-shot functional form of PatchCodec.decode (exact inverse of encode)."""
    return PatchCodec(height, width, patch).decode(lat)


# --- building blocks ----------------------------------------------------------------


def _linear_params(rng: RngState, n_in: int, n_out: int, zero: bool = False, scale=None):
    if zero:
        w = np.zeros((n_in, n_out))
    else:
        w = rng.normal((n_in, n_out)) * (scale if scale is not None else 1.0 / np.sqrt(n_in))
    return Tensor(w, requires_grad=True), Tensor(np.zeros(n_out), requires_grad=True)


def _patchify(x: Tensor, k: int) -> Tensor:
    """[..., h, w, c] -> [..., h/k, w/k, k*k*c] (non-overlapping windows)."""
    h, w, c = x.shape[-3:]
    if h % k or w % k:
        raise ShapeError(f"cannot window {h}x{w} by {k}")
    lead = x.shape[:-3]
    n = len(lead)
    x = reshape(x, lead + (h // k, k, w // k, k, c))
    x = transpose(x, tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4))
    return reshape(x, lead + (h // k, w // k, k * k * c))


class SemanticEncoder:
    """Three stride-equals-kernel conv layers over the reference image."""

    def __init__(self, cfg: ModelConfig, rng: RngState):
        chans = (3,) + cfg.semantic_channels + (cfg.model_dim,)
        self.kernels = cfg.semantic_kernels
        self.layers = []
        for i, k in enumerate(self.kernels):
            w, b = _linear_params(rng, k * k * chans[i], chans[i + 1])
            self.layers.append((k, w, b))

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (_, w, b) in enumerate(self.layers):
            out[f"{prefix}.conv{i}.w"] = w
            out[f"{prefix}.conv{i}.b"] = b
        return out

    def forward(self, img: Tensor) -> Tensor:
        """[..., H, W, 3] -> [..., n_semantic, model_dim]."""
        x = img
        for i, (k, w, b) in enumerate(self.layers):
            x = matmul(_patchify(x, k), w) + b
            if i < len(self.layers) - 1:
                x = gelu(x)
        lead = x.shape[:-3]
        return reshape(x, lead + (x.shape[-3] * x.shape[-2], x.shape[-1]))


class TimeEmbed:
    """Sinusoidal timestep features followed by a two-layer MLP."""

    def __init__(self, cfg: ModelConfig, rng: RngState):
        self.dim = cfg.time_dim
        if self.dim % 2:
            raise ConfigError(f"time_dim must be even, got {self.dim}")
        self.w1, self.b1 = _linear_params(rng, self.dim, self.dim)
        self.w2, self.b2 = _linear_params(rng, self.dim, self.dim)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }

    def forward(self, t: np.ndarray) -> Tensor:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        half = self.dim // 2
        freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
        args = t[:, None] * freqs[None, :]
        feats = Tensor(np.concatenate([np.cos(args), np.sin(args)], axis=1))
        return matmul(gelu(matmul(feats, self.w1) + self.b1), self.w2) + self.b2


def _modulate(x_norm: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return x_norm * (scale + 1.0) + shift


class DiTBlock:
    def __init__(self, cfg: ModelConfig, rng: RngState):
        d, t = cfg.model_dim, cfg.time_dim
        self.cfg = cfg
        # Four (shift, scale) pairs, one per sub-module; zero-init keeps the
        # modulation inert at the start of training.
        self.adaln_w, self.adaln_b = _linear_params(rng, t, 8 * d, zero=True)
        self.self_attn = MultiHeadConfig.create(d, cfg.n_heads, rng)
        self.cross_attn = MultiHeadConfig.create(d, cfg.n_heads, rng)
        self.emphasize = (
            MultiHeadConfig.create(d, cfg.n_heads, rng) if cfg.emphasize_enabled else None
        )
        self.ff_w1, self.ff_b1 = _linear_params(rng, d, 4 * d)
        self.ff_w2, self.ff_b2 = _linear_params(rng, 4 * d, d, zero=True)

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {
            f"{prefix}.adaln.w": self.adaln_w,
            f"{prefix}.adaln.b": self.adaln_b,
            f"{prefix}.ff.w1": self.ff_w1,
            f"{prefix}.ff.b1": self.ff_b1,
            f"{prefix}.ff.w2": self.ff_w2,
            f"{prefix}.ff.b2": self.ff_b2,
        }
        out.update(self.self_attn.params.named(f"{prefix}.self"))
        out.update(self.cross_attn.params.named(f"{prefix}.cross"))
        if self.emphasize is not None:
            out.update(self.emphasize.params.named(f"{prefix}.emph"))
        return out

    def _mod_parts(self, t_emb: Tensor, t0_emb: Tensor, gflag: np.ndarray) -> list:
        """Per-token (shift, scale) pairs: t=0 row for reference tokens."""
        d = self.cfg.model_dim
        mod_t = matmul(t_emb, self.adaln_w) + self.adaln_b  # [B, 8d]
        mod_t0 = matmul(t0_emb, self.adaln_w) + self.adaln_b
        b = t_emb.shape[0]
        mod_t = reshape(mod_t, (b, 1, 8 * d))
        mod_t0 = reshape(mod_t0, (b, 1, 8 * d))
        g = Tensor(gflag)  # [n_tokens, 1]
        mod = mod_t0 * (1.0 - g) + mod_t * g  # [B, n_tokens, 8d]
        return [
            (slice_axis(mod, -1, 2 * i * d, (2 * i + 1) * d),
             slice_axis(mod, -1, (2 * i + 1) * d, (2 * i + 2) * d))
            for i in range(4)
        ]

    def forward(
        self,
        seq: LatentSequence,
        memory: Tensor,
        t_emb: Tensor,
        t0_emb: Tensor,
        gflag: np.ndarray,
    ) -> LatentSequence:
        cfg = self.cfg
        parts = self._mod_parts(t_emb, t0_emb, gflag)
        x = seq.tokens
        h = _modulate(layernorm(x), *parts[0])
        x = masked_self_attention(
            x,
            seq.split,
            self.self_attn,
            cfg.rope_config,
            seq.positions,
            x_normed=h,
            mask_enabled=cfg.mask_enabled,
        )
        h = _modulate(layernorm(x), *parts[1])
        x = cross_attention(x, memory, self.cross_attn, x_normed=h)
        if self.emphasize is not None:
            h = _modulate(layernorm(x), *parts[2])
            rope_pack = (seq.positions, cfg.rope_config) if cfg.emphasize_rope else None
            x = emphasize_attention(
                x, seq.split, self.emphasize, x_normed=h, rope_pack=rope_pack
            )
        h = _modulate(layernorm(x), *parts[3])
        ff = matmul(gelu(matmul(h, self.ff_w1) + self.ff_b1), self.ff_w2) + self.ff_b2
        x = x + ff
        return LatentSequence(tokens=x, positions=seq.positions, split=seq.split)


class ContextDiT:
    """Full network: codec, encoders, stacked blocks, dual heads."""

    def __init__(self, cfg: ModelConfig, rng: Optional[RngState] = None):
        rng = rng if rng is not None else RngState(0)
        self.cfg = cfg
        self.codec = PatchCodec(cfg.height, cfg.width, cfg.patch_size)
        self.positions, self.split = build_layout(cfg)
        self.gflag = np.array(
            [[float(p.group_flag)] for p in self.positions], dtype=np.float64
        )
        c, d = cfg.latent_channels, cfg.model_dim
        self.in_w, self.in_b = _linear_params(rng, c, d)
        self.time_embed = TimeEmbed(cfg, rng)
        self.prompt_table = Tensor(rng.normal((len(cfg.vocab), d)) * 0.02, requires_grad=True)
        self.null_token = Tensor(rng.normal((1, d)) * 0.02, requires_grad=True)
        self.semantic = SemanticEncoder(cfg, rng)
        self.blocks = [DiTBlock(cfg, rng) for _ in range(cfg.depth)]
        self.final_gain = Tensor(np.ones(d), requires_grad=True)
        self.final_bias = Tensor(np.zeros(d), requires_grad=True)
        self.ref_head_w, self.ref_head_b = _linear_params(rng, d, c, zero=True)
        self.noise_head_w, self.noise_head_b = _linear_params(rng, d, c, zero=True)

    # --- parameters -------------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        out = {
            "in.w": self.in_w,
            "in.b": self.in_b,
            "prompt.table": self.prompt_table,
            "prompt.null": self.null_token,
            "final.gain": self.final_gain,
            "final.bias": self.final_bias,
            "ref_head.w": self.ref_head_w,
            "ref_head.b": self.ref_head_b,
            "noise_head.w": self.noise_head_w,
            "noise_head.b": self.noise_head_b,
        }
        out.update(self.time_embed.named("time"))
        out.update(self.semantic.named("semantic"))
        for i, blk in enumerate(self.blocks):
            out.update(blk.named(f"block{i}"))
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def randomize_for_testing(self, rng: RngState, scale: float = 0.05) -> None:
        """Overwrite every parameter (including zero-init ones) with noise."""
        for p in self.parameters().values():
            p.data[...] = rng.normal(p.shape) * scale

    # --- conditioning -------------------------------------------------------
    def encode_prompts(self, first_ids, later_ids, ref_image) -> ConditioningMemory:
        """Build the cross-attention memory for a batch.

        first_ids: [B, n_first] attribute ids (dropped under the prompt
        ablation); later_ids: [B, n_later] motion/scene/link ids; ref_image:
        [B, H, W, 3] feeding the semantic pathway.
        """
        later_ids = np.asarray(later_ids, dtype=np.int64)
        if later_ids.size == 0:
            raise VocabError("later-frame prompt must not be empty")
        first = None
        if self.cfg.use_first_frame_prompt:
            first = embedding(self.prompt_table, np.asarray(first_ids, dtype=np.int64))
        later = embedding(self.prompt_table, later_ids)
        img = ref_image if isinstance(ref_image, Tensor) else Tensor(ref_image)
        semantic = self.semantic.forward(img)
        return ConditioningMemory(
            first_frame_tokens=first,
            later_frame_tokens=later,
            semantic_tokens=semantic,
        )

    def encode_sample_batch(self, samples) -> ConditioningMemory:
        first = np.stack([s.first_frame_prompt for s in samples])
        later = np.stack([s.later_frame_prompt for s in samples])
        refs = np.stack([s.ref_image for s in samples])
        return self.encode_prompts(first, later, refs)

    def null_memory(self, mem) -> Tensor:
        """Same-shape memory made of the learned null token (for guidance)."""
        tokens = mem.tokens() if isinstance(mem, ConditioningMemory) else mem
        b, m, d = tokens.shape[-3], tokens.shape[-2], tokens.shape[-1]
        ones = Tensor(np.ones((b, m, 1)))
        return matmul(ones, reshape(self.null_token, (1, 1, d)))

    # --- forward ------------------------------------------------------------
    def forward(self, ref_latent, vid_latent, t, mem) -> tuple[Tensor, Tensor]:
        """(reconstructed reference latent, predicted noise on video tokens)."""
        ref = ref_latent if isinstance(ref_latent, Tensor) else Tensor(ref_latent)
        vid = vid_latent if isinstance(vid_latent, Tensor) else Tensor(vid_latent)
        cfg = self.cfg
        squeeze = ref.ndim == 2
        if squeeze:
            ref = reshape(ref, (1,) + ref.shape)
            vid = reshape(vid, (1,) + vid.shape)
        if ref.shape[-2:] != cfg.ref_latent_shape:
            raise ShapeError(f"ref latent {ref.shape} != {cfg.ref_latent_shape}")
        if vid.shape[-2:] != cfg.video_latent_shape:
            raise ShapeError(f"video latent {vid.shape} != {cfg.video_latent_shape}")
        memory = mem.tokens() if isinstance(mem, ConditioningMemory) else mem
        if memory.ndim == 2:
            memory = reshape(memory, (1,) + memory.shape)

        b = ref.shape[0]
        t_arr = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (b,))
        t_emb = self.time_embed.forward(t_arr)
        t0_emb = self.time_embed.forward(np.zeros(b))

        tokens = matmul(concat([ref, vid], axis=-2), self.in_w) + self.in_b
        seq = LatentSequence(tokens=tokens, positions=self.positions, split=self.split)
        for blk in self.blocks:
            seq = blk.forward(seq, memory, t_emb, t0_emb, self.gflag)
        x = layernorm(seq.tokens, self.final_gain, self.final_bias)

        nr = self.split.n_ref_tokens
        ref_tokens = slice_axis(x, -2, 0, nr)
        vid_tokens = slice_axis(x, -2, nr, self.split.total)
        # Reconstruction is a learned delta over the clean input latent, so a
        # zero-init head reproduces the reference exactly.
        ref_recon = ref + (matmul(ref_tokens, self.ref_head_w) + self.ref_head_b)
        eps_pred = matmul(vid_tokens, self.noise_head_w) + self.noise_head_b
        if squeeze:
            ref_recon = reshape(ref_recon, ref_recon.shape[1:])
            eps_pred = reshape(eps_pred, eps_pred.shape[1:])
        return ref_recon, eps_pred

    __call__ = forward
