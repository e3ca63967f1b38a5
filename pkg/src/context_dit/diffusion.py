"""Noise schedule, forward diffusion, dual losses, and reverse-process samplers.

Video-token latents are noised and denoised; the reference latent is an input
condition that is re-fed clean at every reverse step and never written to.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, RangeError, ShapeError
from .tensor import RngState, Tensor, mse, no_grad


@dataclass
class NoiseSchedule:
    """Cumulative products alpha_bar[t] for t in [0, T)."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 1:
            raise ConfigError("alpha_bar must be a non-empty 1-D array")
        if np.any(ab <= 0.0) or np.any(ab > 1.0):
            raise ConfigError("alpha_bar entries must lie in (0, 1]")
        if np.any(np.diff(ab) > 0.0):
            raise ConfigError("alpha_bar must be monotone non-increasing")
        self.alpha_bar = ab

    @property
    def T(self) -> int:
        return int(self.alpha_bar.size)


def make_schedule(kind: str = "cosine", T: int = 200) -> NoiseSchedule:
    if T < 2:
        raise ConfigError(f"schedule needs T >= 2, got {T}")
    if kind == "linear":
        betas = np.linspace(1e-4, 0.02, T)
        ab = np.cumprod(1.0 - betas)
    elif kind == "cosine":
        s = 0.008
        f = lambda u: np.cos((u + s) / (1.0 + s) * np.pi / 2.0) ** 2
        t = (np.arange(T, dtype=np.float64) + 1.0) / T
        ab = f(t) / f(0.0)
        ab = np.clip(ab, 1e-6, 1.0)
        ab = np.minimum.accumulate(ab)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(alpha_bar=ab)


def forward_diffuse(x0: Tensor, t, eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """z_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps, with ab the cumulative schedule.

    `t` may be a single int or a per-batch-element int array; per-element
    coefficients broadcast over the trailing token/channel axes.
    """
    if eps.shape != x0.shape:
        raise ShapeError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    t_arr = np.asarray(t, dtype=np.int64)
    if np.any(t_arr < 0) or np.any(t_arr >= sched.T):
        raise RangeError(f"timestep {t} outside [0, {sched.T})")
    ab = sched.alpha_bar[t_arr]
    if t_arr.ndim:  # per-element t: line the coefficients up with the batch axis
        extra = (1,) * (x0.ndim - 1)
        ab = ab.reshape(t_arr.shape + extra)
    a = Tensor(np.sqrt(ab))
    b = Tensor(np.sqrt(1.0 - ab))
    return x0 * a + eps * b


def gen_loss(eps: Tensor, eps_pred: Tensor) -> Tensor:
    """Mean squared error between injected and predicted noise (video tokens)."""
    return mse(eps_pred, eps)


def ref_loss(ref_recon_pixels: Tensor, ref_image: Tensor) -> Tensor:
    """Mean squared error between the decoded reconstruction and the reference."""
    return mse(ref_recon_pixels, ref_image)


@dataclass
class LossTerms:
    """Dual-guidance loss: l_total = l_gen + lam * l_ref, lam = f_r / f_v."""

    l_gen: Tensor
    l_ref: Tensor
    lam: float
    l_total: Tensor

    def floats(self) -> dict:
        return {
            "l_gen": self.l_gen.item(),
            "l_ref": self.l_ref.item(),
            "lambda": self.lam,
            "l_total": self.l_total.item(),
        }


def total_loss(l_gen: Tensor, l_ref: Tensor, f_r: int = 1, f_v: int = 1) -> LossTerms:
    if f_v <= 0:
        raise ConfigError(f"f_v must be positive, got {f_v}")
    lam = f_r / f_v
    return LossTerms(l_gen=l_gen, l_ref=l_ref, lam=lam, l_total=l_gen + l_ref * lam)


# --- reverse process ------------------------------------------------------------


def _step_schedule(T: int, steps: int) -> list[int]:
    if steps < 0 or steps > T:
        raise RangeError(f"steps must lie in [0, {T}], got {steps}")
    if steps == 0:
        return []
    if steps == 1:
        return [T - 1]
    return [int(round(v)) for v in np.linspace(T - 1, 0, steps)]


def _predict_eps(model, cond, ref_latent: np.ndarray, x: np.ndarray, t: int, guidance_scale: float):
    ref_in = Tensor(ref_latent)
    # The reference slice of the model input is the clean latent at every step.
    assert np.array_equal(ref_in.data, ref_latent)
    _, eps = model(ref_in, Tensor(x), t, cond)
    eps = eps.data
    if guidance_scale != 1.0:
        if not hasattr(model, "null_memory"):
            raise ConfigError("guidance_scale != 1 needs a model with null_memory()")
        _, eps_u = model(Tensor(ref_latent), Tensor(x), t, model.null_memory(cond))
        eps = eps_u.data + guidance_scale * (eps - eps_u.data)
    return eps


def _reverse(
    model,
    cond,
    ref_latent: np.ndarray,
    sched: NoiseSchedule,
    steps: int,
    eta: float,
    init_noise: np.ndarray,
    rng: Optional[RngState] = None,
    guidance_scale: float = 1.0,
    log_path: Optional[str] = None,
    x0_true: Optional[np.ndarray] = None,
) -> np.ndarray:
    x = np.array(init_noise, dtype=np.float64, copy=True)
    ts = _step_schedule(sched.T, steps)
    log_rows = []
    with no_grad():
        for i, t_cur in enumerate(ts):
            t_prev = ts[i + 1] if i + 1 < len(ts) else None
            ab_t = sched.alpha_bar[t_cur]
            ab_p = sched.alpha_bar[t_prev] if t_prev is not None else 1.0
            eps_hat = _predict_eps(model, cond, ref_latent, x, t_cur, guidance_scale)
            x0_pred = (x - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
            if eta > 0.0:
                sigma = (
                    eta
                    * np.sqrt((1.0 - ab_p) / (1.0 - ab_t))
                    * np.sqrt(1.0 - ab_t / ab_p)
                )
            else:
                sigma = 0.0
            dir_coef = np.sqrt(max(1.0 - ab_p - sigma**2, 0.0))
            x = np.sqrt(ab_p) * x0_pred + dir_coef * eps_hat
            if sigma > 0.0:
                if rng is None:
                    raise ConfigError("stochastic sampling needs an RngState")
                x = x + sigma * rng.normal(x.shape)
            if log_path is not None:
                row = {
                    "step": int(t_cur),
                    "mean": float(x.mean()),
                    "var": float(x.var()),
                }
                if x0_true is not None:
                    row["x0_mse"] = float(np.mean((x0_pred - x0_true) ** 2))
                log_rows.append(row)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            for row in log_rows:
                fh.write(json.dumps(row) + "\n")
    return x


def ancestral_sample(
    model,
    cond,
    ref_latent: np.ndarray,
    sched: NoiseSchedule,
    rng: RngState,
    steps: int,
    vid_shape: Optional[tuple] = None,
    init_noise: Optional[np.ndarray] = None,
    guidance_scale: float = 1.0,
    log_path: Optional[str] = None,
    x0_true: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Stochastic reverse process over the video latents (eta = 1).

    The reference latent is held clean and re-fed at every step; only the video
    latents are updated. steps == 0 returns the initial noise unchanged.
    """
    if init_noise is None:
        if vid_shape is None:
            raise ConfigError("ancestral_sample needs vid_shape or init_noise")
        init_noise = rng.normal(tuple(vid_shape))
    return _reverse(
        model,
        cond,
        np.asarray(ref_latent, dtype=np.float64),
        sched,
        steps,
        eta=1.0,
        init_noise=init_noise,
        rng=rng,
        guidance_scale=guidance_scale,
        log_path=log_path,
        x0_true=x0_true,
    )


def ddim_sample(
    model,
    cond,
    ref_latent: np.ndarray,
    sched: NoiseSchedule,
    steps: int,
    init_noise: np.ndarray,
    guidance_scale: float = 1.0,
    log_path: Optional[str] = None,
    x0_true: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Deterministic reverse process (eta = 0); bit-identical for equal inputs."""
    return _reverse(
        model,
        cond,
        np.asarray(ref_latent, dtype=np.float64),
        sched,
        steps,
        eta=0.0,
        init_noise=np.asarray(init_noise, dtype=np.float64),
        rng=None,
        guidance_scale=guidance_scale,
        log_path=log_path,
        x0_true=x0_true,
    )
