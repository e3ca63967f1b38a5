"""Training loop: AdamW with linear warmup, the dual-guidance objective,
ablation switches, and bit-exact checkpointing.

All randomness (batch selection, timesteps, noise, conditioning dropout) flows
through one counter-based stream whose state is checkpointed, so a resumed run
reproduces the uninterrupted loss sequence exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Sample
from .diffusion import (
    LossTerms,
    forward_diffuse,
    gen_loss,
    make_schedule,
    ref_loss,
    total_loss,
)
from .errors import ConfigError, FormatError, NumericError
from .model import ContextDiT, ModelConfig
from .tensor import RngState, Tensor, array_from_bytes, array_to_bytes, no_grad, reshape

CHECKPOINT_MAGIC = b"CDIT"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-4
    warmup_steps: int = 100
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 8
    total_steps: int = 2000
    seed: int = 0
    cond_dropout: float = 0.0
    log_every: int = 10
    no_aug_prompt: bool = False
    no_recon_loss: bool = False
    no_attn_mod: bool = False
    no_gap_rope: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.warmup_steps < 0 or self.batch_size <= 0 or self.total_steps < 0:
            raise ConfigError("warmup_steps/batch_size/total_steps out of range")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ConfigError("cond_dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def apply_ablations(model_cfg: ModelConfig, flags: TrainConfig) -> ModelConfig:
    """Project the ablation switches onto the model config.

    no_gap_rope forces the temporal gap to zero; no_attn_mod removes both the
    emphasize stage and the self-attention mask (they ship as one switch, with
    the finer-grained pair still available directly on ModelConfig);
    no_aug_prompt drops the first-frame prompt tokens. no_recon_loss is
    handled inside train_step.
    """
    changes: dict = {}
    if flags.no_gap_rope:
        changes["gap_beta"] = 0
    if flags.no_attn_mod:
        changes["mask_enabled"] = False
        changes["emphasize_enabled"] = False
    if flags.no_aug_prompt:
        changes["use_first_frame_prompt"] = False
    return dataclasses.replace(model_cfg, **changes) if changes else model_cfg


# --- AdamW ----------------------------------------------------------------------


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict[str, Tensor]) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def warmup_lr(cfg: TrainConfig, step: int) -> float:
    """Linear warmup: lr * min(step / warmup, 1)."""
    if cfg.warmup_steps == 0:
        return cfg.lr
    return cfg.lr * min(step / cfg.warmup_steps, 1.0)


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    cfg: TrainConfig,
    step: int,
) -> float:
    """One decoupled-weight-decay Adam update with bias correction.

    Returns the effective learning rate used. NaN/Inf gradients abort with the
    offending parameter named.
    """
    if step < 1:
        raise ConfigError("adamw_step expects 1-based step numbers")
    lr_t = warmup_lr(cfg, step)
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        p.data -= lr_t * (update + cfg.weight_decay * p.data)
    return lr_t


# --- training step --------------------------------------------------------------


def train_step(
    batch: list[Sample],
    model: ContextDiT,
    sched,
    cfg: TrainConfig,
    rng: RngState,
    opt_state: AdamWState,
    step: int,
) -> LossTerms:
    """One optimizer step on a batch; returns the loss terms.

    Draw order (batch handled by the caller): timesteps, noise, optional
    conditioning dropout. Keep it stable or checkpoints stop resuming
    bit-exactly.
    """
    mcfg = model.cfg
    b = len(batch)
    refs = np.stack([s.ref_image for s in batch])
    vids = np.stack([s.video for s in batch])

    with no_grad():
        ref_lat = model.codec.encode(Tensor(refs)).data
        vid_lat = model.codec.encode(Tensor(vids)).data  # [B, F, ghw, C]
        vid_lat = vid_lat.reshape(b, mcfg.n_vid_tokens, mcfg.latent_channels)

    t = rng.integers(0, sched.T, (b,))
    eps = Tensor(rng.normal((b,) + mcfg.video_latent_shape))
    z_t = forward_diffuse(Tensor(vid_lat), t, eps, sched)

    mem = model.encode_sample_batch(batch)
    memory = mem.tokens()
    if cfg.cond_dropout > 0.0:
        keep = (rng.uniform(0.0, 1.0, (b, 1, 1)) >= cfg.cond_dropout).astype(np.float64)
        memory = memory * Tensor(keep) + model.null_memory(memory) * Tensor(1.0 - keep)

    ref_recon, eps_pred = model.forward(Tensor(ref_lat), z_t, t, memory)
    l_gen = gen_loss(eps, eps_pred)
    if cfg.no_recon_loss:
        l_ref = Tensor(0.0)
    else:
        recon_px = model.codec.decode(ref_recon)  # [B, 1, H, W, 3]
        recon_px = reshape(recon_px, (b, mcfg.height, mcfg.width, 3))
        l_ref = ref_loss(recon_px, Tensor(refs))
    terms = total_loss(l_gen, l_ref, f_r=1, f_v=mcfg.frames)

    model.zero_grad()
    terms.l_total.backward()
    params = model.parameters()
    grads = {k: p.grad for k, p in params.items()}
    adamw_step(params, grads, opt_state, cfg, step)
    return terms


def build_model(model_cfg: ModelConfig, seed: int) -> ContextDiT:
    return ContextDiT(model_cfg, RngState(seed).derive("init"))


def train_model(
    samples: list[Sample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    log_path=None,
    checkpoint_path=None,
    resume_from=None,
    progress: bool = False,
) -> tuple[ContextDiT, list[dict]]:
    """Train from scratch or resume; returns (model, per-step history).

    The history rows mirror the JSON-lines training log: step, l_gen, l_ref,
    l_total, lr, wall_time (wall time is the only non-deterministic field).
    """
    if not samples:
        raise ConfigError("training needs a non-empty dataset")
    if resume_from is not None:
        loaded = load_checkpoint(resume_from, expect_model=model_cfg, expect_train=train_cfg)
        model, opt_state = loaded.model, loaded.opt_state
        rng, start_step = loaded.rng, loaded.step
    else:
        model = build_model(model_cfg, train_cfg.seed)
        opt_state = AdamWState.init(model.parameters())
        rng = RngState(train_cfg.seed).derive("train")
        start_step = 0

    sched = make_schedule(model_cfg.schedule_kind, model_cfg.timesteps)
    history: list[dict] = []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for step in range(start_step + 1, train_cfg.total_steps + 1):
            t0 = time.perf_counter()
            idx = rng.integers(0, len(samples), (train_cfg.batch_size,))
            batch = [samples[int(i)] for i in idx]
            terms = train_step(batch, model, sched, train_cfg, rng, opt_state, step)
            row = {
                "step": step,
                **terms.floats(),
                "lr": warmup_lr(train_cfg, step),
                "wall_time": time.perf_counter() - t0,
            }
            history.append(row)
            if log_fh is not None:
                log_fh.write(json.dumps(row) + "\n")
            if progress and (step % max(1, train_cfg.log_every) == 0 or step == 1):
                print(
                    f"step {step:5d}  l_total {row['l_total']:.5f}  "
                    f"l_gen {row['l_gen']:.5f}  l_ref {row['l_ref']:.5f}  "
                    f"lr {row['lr']:.2e}"
                )
    finally:
        if log_fh is not None:
            log_fh.close()
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path, model, opt_state, train_cfg.total_steps, rng, train_cfg
        )
    return model, history


# --- checkpoint container ----------------------------------------------------------
#
# Layout: magic, version u32, header-length u32, canonical-JSON header,
# tensor count u32, then (name-length u16, name, serialized array) per tensor,
# closed by a CRC32 of everything before it.


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    blob = _canonical_json({"model": model_cfg.to_dict(), "train": train_cfg.to_dict()})
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class LoadedCheckpoint:
    model: ContextDiT
    opt_state: AdamWState
    step: int
    rng: RngState
    model_cfg: ModelConfig
    train_cfg: TrainConfig


def save_checkpoint(
    path,
    model: ContextDiT,
    opt_state: AdamWState,
    step: int,
    rng: RngState,
    train_cfg: TrainConfig,
) -> None:
    params = model.parameters()
    header = {
        "version": CHECKPOINT_VERSION,
        "step": int(step),
        "rng": rng.state_dict(),
        "config_hash": config_hash(model.cfg, train_cfg),
        "model_config": model.cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
    }
    hbytes = _canonical_json(header).encode("utf-8")
    tensors: list[tuple[str, np.ndarray]] = []
    for name in sorted(params):
        tensors.append((f"param.{name}", params[name].data))
    for name in sorted(opt_state.m):
        tensors.append((f"opt.m.{name}", opt_state.m[name]))
        tensors.append((f"opt.v.{name}", opt_state.v[name]))

    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<I", CHECKPOINT_VERSION)
    body += struct.pack("<I", len(hbytes))
    body += hbytes
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        nb = name.encode("utf-8")
        body += struct.pack("<H", len(nb))
        body += nb
        body += array_to_bytes(arr)
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    Path(path).write_bytes(bytes(body))


def load_checkpoint(
    path,
    expect_model: Optional[ModelConfig] = None,
    expect_train: Optional[TrainConfig] = None,
) -> LoadedCheckpoint:
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"not a checkpoint file: {path}")
    (crc_stored,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc_stored:
        raise FormatError(f"checkpoint checksum mismatch: {path}")
    off = 4
    (version,) = struct.unpack_from("<I", buf, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", buf, off)
    off += 4
    header = json.loads(buf[off : off + hlen].decode("utf-8"))
    off += hlen
    model_cfg = ModelConfig.from_dict(header["model_config"])
    train_cfg = TrainConfig.from_dict(header["train_config"])
    if header.get("config_hash") != config_hash(model_cfg, train_cfg):
        raise FormatError("checkpoint config hash does not match its own configs")
    if expect_model is not None or expect_train is not None:
        want = config_hash(expect_model or model_cfg, expect_train or train_cfg)
        if want != header["config_hash"]:
            raise FormatError("checkpoint was written under a different config")

    (n_tensors,) = struct.unpack_from("<I", buf, off)
    off += 4
    table: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + nlen].decode("utf-8")
        off += nlen
        arr, off = array_from_bytes(buf, off)
        table[name] = arr
    if off != len(buf) - 4:
        raise FormatError(f"checkpoint has trailing bytes: {path}")

    model = ContextDiT(model_cfg, RngState(0))
    params = model.parameters()
    opt_state = AdamWState.init(params)
    for name, p in params.items():
        key = f"param.{name}"
        if key not in table:
            raise FormatError(f"checkpoint missing tensor {key!r}")
        if table[key].shape != p.data.shape:
            raise FormatError(f"checkpoint tensor {key!r} has shape {table[key].shape}")
        p.data[...] = table[key]
        opt_state.m[name][...] = table[f"opt.m.{name}"]
        opt_state.v[name][...] = table[f"opt.v.{name}"]
    rng = RngState.from_state_dict(header["rng"])
    return LoadedCheckpoint(
        model=model,
        opt_state=opt_state,
        step=int(header["step"]),
        rng=rng,
        model_cfg=model_cfg,
        train_cfg=train_cfg,
    )
