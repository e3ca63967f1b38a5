"""Rotary position embedding over factorized (frame, y, x) token positions.

Each attention head dim is split into a temporal section and two spatial
sections; every section gets classic pairwise 2D rotations driven by its own
index. Generated-video tokens (group flag 1) have their temporal index shifted
by a fixed gap `beta`, which pushes them away from the reference segment in
rotary phase space while leaving spatial positions shared.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, _accumulate, _node


def _default_split(head_dim: int) -> tuple[int, int, int]:
    # Temporal gets ~ half the dims, spatial axes share the rest evenly.
    spatial = 2 * (head_dim // 8) or 2
    temporal = head_dim - 2 * spatial
    if temporal <= 0 or temporal % 2:
        raise ConfigError(
            f"no default dim split for head_dim={head_dim}; pass dim_split explicitly"
        )
    return (temporal, spatial, spatial)


@dataclass(frozen=True)
class RopeConfig:
    head_dim: int
    dim_split: tuple[int, int, int] | None = None
    theta_base: float = 10000.0
    beta: int = 4
    rotate_values: bool = False

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 2:
            raise ConfigError(f"head_dim must be positive and even, got {self.head_dim}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.dim_split is None:
            object.__setattr__(self, "dim_split", _default_split(self.head_dim))
        else:
            object.__setattr__(self, "dim_split", tuple(self.dim_split))
        if len(self.dim_split) != 3:
            raise ConfigError("dim_split must be (temporal, y, x)")
        if any(d < 0 or d % 2 for d in self.dim_split):
            raise ConfigError(f"dim_split entries must be even and >= 0: {self.dim_split}")
        if sum(self.dim_split) != self.head_dim:
            raise ConfigError(
                f"dim_split {self.dim_split} does not sum to head_dim {self.head_dim}"
            )


@dataclass(frozen=True)
class TokenPosition:
    frame_index: int
    y: int
    x: int
    group_flag: int  # 0 = reference token, 1 = generated-video token

    def __post_init__(self):
        if self.group_flag not in (0, 1):
            raise ConfigError(f"group_flag must be 0 or 1, got {self.group_flag}")
        if min(self.frame_index, self.y, self.x) < 0:
            raise ConfigError("token positions must be non-negative")


def effective_temporal_index(pos: TokenPosition, cfg: RopeConfig) -> int:
    """Temporal rotary index: the frame index plus the gap for video tokens."""
    return pos.frame_index + cfg.beta * pos.group_flag


def rotation_angles(index: float, n_dims: int, theta_base: float) -> np.ndarray:
    """Angles index * theta_base**(-2k/n_dims) for k in [0, n_dims/2)."""
    if n_dims % 2:
        raise ConfigError(f"rotation needs an even dim count, got {n_dims}")
    k = np.arange(n_dims // 2, dtype=np.float64)
    return index * theta_base ** (-2.0 * k / n_dims)


def rotation_tables(
    positions: Sequence[TokenPosition], cfg: RopeConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Per-token (cos, sin) tables of shape [tokens, head_dim/2]."""
    n_t, n_y, n_x = cfg.dim_split
    t_idx = np.array([effective_temporal_index(p, cfg) for p in positions], dtype=np.float64)
    y_idx = np.array([p.y for p in positions], dtype=np.float64)
    x_idx = np.array([p.x for p in positions], dtype=np.float64)
    sections = []
    for idx, n in ((t_idx, n_t), (y_idx, n_y), (x_idx, n_x)):
        if n == 0:
            continue
        k = np.arange(n // 2, dtype=np.float64)
        freqs = cfg.theta_base ** (-2.0 * k / n)
        sections.append(idx[:, None] * freqs[None, :])
    angles = np.concatenate(sections, axis=1) if sections else np.zeros((len(positions), 0))
    return np.cos(angles), np.sin(angles)


def rotate_with_tables(qk: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate interleaved dim pairs of qk[..., tokens, heads, head_dim].

    The tables index the tokens axis (-3). Norm of every 2-dim pair is
    preserved; the backward pass rotates gradients by the negated angles.
    """
    if qk.shape[-1] != 2 * cos.shape[-1]:
        raise ShapeError(f"table width {cos.shape[-1]} does not match head_dim {qk.shape[-1]}")
    if qk.shape[-3] != cos.shape[0]:
        raise ShapeError(f"got {cos.shape[0]} positions for {qk.shape[-3]} tokens")
    c = cos[:, None, :]  # broadcast over the heads axis
    s = sin[:, None, :]
    x = qk.data
    xe, xo = x[..., 0::2], x[..., 1::2]
    data = np.empty_like(x)
    data[..., 0::2] = xe * c - xo * s
    data[..., 1::2] = xe * s + xo * c
    out = _node(data, (qk,), None)
    if out._parents:

        def _bw():
            g = out.grad
            ge, go = g[..., 0::2], g[..., 1::2]
            gx = np.empty_like(g)
            gx[..., 0::2] = ge * c + go * s
            gx[..., 1::2] = -ge * s + go * c
            _accumulate(qk, gx)

        out._backward = _bw
    return out


def apply_rotary(qk: Tensor, positions: Sequence[TokenPosition], cfg: RopeConfig) -> Tensor:
    """Apply the factorized rotary embedding to qk[..., tokens, heads, head_dim]."""
    if qk.shape[-1] != cfg.head_dim:
        raise ConfigError(
            f"qk head_dim {qk.shape[-1]} does not match RopeConfig head_dim {cfg.head_dim}"
        )
    if len(positions) != qk.shape[-3]:
        raise ShapeError(f"{len(positions)} positions for {qk.shape[-3]} tokens")
    cos, sin = rotation_tables(positions, cfg)
    return rotate_with_tables(qk, cos, sin)
