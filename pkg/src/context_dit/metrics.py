"""Evaluation metrics and ablation reporting.

Identity is measured by round-tripping rendered/generated frames through a
pixel-level attribute extractor (palette classification + silhouette template
matching), temporal consistency by mean cosine similarity of consecutive
frames, and appearance by subject-region MSE against the clean ground-truth
rendering. All metrics are deterministic functions of (checkpoint, dataset,
seed, sampler config).
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as dataset_mod
from .data import (
    MOTIONS,
    BACKGROUNDS,
    PALETTE,
    MotionProgram,
    Pose,
    Sample,
    SceneSpec,
    SpriteSpec,
    ground_truth_video,
    later_frame_prompt,
    shape_coverage,
)
from .diffusion import ancestral_sample, ddim_sample, make_schedule
from .errors import ConfigError, ExtractionError
from .model import ContextDiT
from .tensor import RngState, Tensor, no_grad

log = logging.getLogger(__name__)

CHROMA_THRESH = 0.08
CLOSE_DIST = 0.10  # strict bound: full-coverage pixels only
MIN_COMPONENT = 12
MIN_ACCESSORY = 3


# --- temporal consistency ------------------------------------------------------


def temporal_consistency_with_flags(video: np.ndarray) -> tuple[float, int]:
    """Mean cosine similarity of consecutive flattened frames.

    A pair touching a zero-norm frame counts as similarity 0; the second
    return value is the number of such pairs.
    """
    video = np.asarray(video, dtype=np.float64)
    if video.shape[0] < 2:
        raise ConfigError("temporal consistency needs at least two frames")
    flat = video.reshape(video.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1)
    sims = []
    zero_pairs = 0
    for i in range(flat.shape[0] - 1):
        if norms[i] == 0.0 or norms[i + 1] == 0.0:
            sims.append(0.0)
            zero_pairs += 1
        else:
            sims.append(float(flat[i] @ flat[i + 1] / (norms[i] * norms[i + 1])))
    if zero_pairs:
        log.warning("temporal consistency saw %d zero-norm frame pair(s)", zero_pairs)
    return float(np.mean(sims)), zero_pairs


def temporal_consistency(video: np.ndarray) -> float:
    return temporal_consistency_with_flags(video)[0]


# --- attribute extraction ---------------------------------------------------------


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest connected True region (plain BFS; frames are tiny).

    Components are found on a one-pixel dilation so that low-chroma seam rows
    (e.g. where an accessory blends into the body) cannot split the subject,
    then intersected back with the original mask.
    """
    grown = _dilate(mask)
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    best: list[tuple[int, int]] = []
    for r0 in range(h):
        for c0 in range(w):
            if not grown[r0, c0] or seen[r0, c0]:
                continue
            stack = [(r0, c0)]
            seen[r0, c0] = True
            comp = []
            while stack:
                r, c = stack.pop()
                if mask[r, c]:
                    comp.append((r, c))
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= rr < h and 0 <= cc < w and grown[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        stack.append((rr, cc))
            if len(comp) > len(best):
                best = comp
    out = np.zeros_like(mask, dtype=bool)
    for r, c in best:
        out[r, c] = True
    return out


def _normalized_palette() -> tuple[list[str], np.ndarray]:
    names = list(PALETTE)
    arr = np.array([PALETTE[n] for n in names], dtype=np.float64)
    return names, arr / arr.max(axis=1, keepdims=True)


_PAL_NAMES, _PAL_NORM = _normalized_palette()


def _classify_pixels(frame: np.ndarray, comp: np.ndarray):
    """Label chromatic component pixels by nearest palette entry.

    Returns (rows, cols, nearest label, close flag). Color identification only
    trusts `close` pixels (anti-aliased blends fall outside every entry), while
    silhouette work may use every labelled pixel so that patterned and blank
    backgrounds erode the subject equally little.
    """
    rows, cols = np.nonzero(comp)
    colors = frame[rows, cols]
    maxc = colors.max(axis=1)
    ok = maxc > 1e-6
    rows, cols, colors, maxc = rows[ok], cols[ok], colors[ok], maxc[ok]
    norm = colors / maxc[:, None]
    d = np.linalg.norm(norm[:, None, :] - _PAL_NORM[None, :, :], axis=2)
    return rows, cols, d.argmin(axis=1), d.min(axis=1)


def _fit_shape(
    body_rows: np.ndarray,
    body_cols: np.ndarray,
    h: int,
    w: int,
    occluded: np.ndarray | None = None,
) -> str:
    """Template correlation over the three body silhouettes.

    `occluded` marks pixels hidden behind a hat; those are left out of the
    comparison on both sides. The score is template IoU plus a fill-ratio
    agreement term, both computed over the visible part of the bounding box.
    """
    sil = np.zeros((h, w), dtype=bool)
    sil[body_rows, body_cols] = True
    # Vertical fill recovers band rows carved out by a collar/belt.
    for c in np.unique(body_cols):
        rr = body_rows[body_cols == c]
        sil[rr.min() : rr.max() + 1, c] = True
    rmin, rmax = body_rows.min(), body_rows.max()
    cmin, cmax = body_cols.min(), body_cols.max()
    bh, bw = rmax - rmin + 1, cmax - cmin + 1
    cx = (cmin + cmax + 1) / 2.0
    cy = (rmin + rmax + 1) / 2.0
    valid = np.ones((h, w), dtype=bool)
    if occluded is not None:
        valid &= ~occluded
    bbox = np.zeros((h, w), dtype=bool)
    bbox[rmin : rmax + 1, cmin : cmax + 1] = True
    denom = (bbox & valid).sum()
    if denom == 0:
        raise ExtractionError("subject fully occluded")
    fill_sil = (sil & valid).sum() / denom

    if occluded is None:
        candidates = {
            "circle": Pose(cx=cx, cy=cy, r=(bh + bw) / 4.0),
            "square": Pose(cx=cx, cy=cy, r=(bh + bw) / (4.0 * dataset_mod.SQUARE_HALF)),
            "triangle": Pose(
                cx=cx,
                cy=rmin + 0.5 - dataset_mod.TRI_TOP * bh / (dataset_mod.TRI_APEX - dataset_mod.TRI_TOP),
                r=bh / (dataset_mod.TRI_APEX - dataset_mod.TRI_TOP),
            ),
        }
    else:
        # Top truncated by a hat: every candidate is sized from the visible
        # width and anchored at the visible bottom edge.
        bot = rmax + 1.0
        r_c = bw / 2.0
        r_s = bw / (2.0 * dataset_mod.SQUARE_HALF)
        r_t = bw / (2.0 * dataset_mod.TRI_HALFWIDTH)
        candidates = {
            "circle": Pose(cx=cx, cy=bot - r_c, r=r_c),
            "square": Pose(cx=cx, cy=bot - dataset_mod.SQUARE_HALF * r_s, r=r_s),
            "triangle": Pose(cx=cx, cy=bot - dataset_mod.TRI_APEX * r_t, r=r_t),
        }
    best, best_score = None, -np.inf
    for name, pose in candidates.items():
        tmpl = (shape_coverage(name, pose, h, w) >= 0.5) & valid
        svis = sil & valid
        union = (tmpl | svis).sum()
        iou = (tmpl & svis).sum() / union if union else 0.0
        fill_tmpl = (tmpl & bbox).sum() / denom
        score = iou - 0.5 * abs(fill_sil - fill_tmpl)
        if score > best_score:
            best, best_score = name, score
    return best


def extract_attributes(frame: np.ndarray, subject_mask: np.ndarray | None = None) -> SpriteSpec:
    """Recover the subject's SpriteSpec from one frame.

    Locates the subject via the mask or a chroma-segmentation fallback,
    classifies pixel colors against the palette (invariant to the scalar
    illumination), then identifies the accessory by its position relative to
    the body and the body shape by silhouette template matching.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ExtractionError(f"expected an [H, W, 3] frame, got {frame.shape}")
    h, w, _ = frame.shape
    chroma = frame.max(axis=2) - frame.min(axis=2)
    cand = chroma > CHROMA_THRESH
    if subject_mask is not None:
        comp = np.asarray(subject_mask, dtype=bool) & cand
    else:
        comp = _largest_component(cand)
    if comp.sum() < MIN_COMPONENT:
        raise ExtractionError(f"no subject found ({int(comp.sum())} chromatic pixels)")

    rows, cols, labels, dists = _classify_pixels(frame, comp)
    close = dists < CLOSE_DIST
    if close.sum() < MIN_COMPONENT:
        raise ExtractionError("subject pixels do not match the palette")
    counts = np.bincount(labels[close], minlength=len(_PAL_NAMES))
    body_idx = int(counts.argmax())
    body_sel = labels == body_idx
    # Exact pixels drive color/position decisions; the looser set only shapes
    # the silhouette so patterned backgrounds do not erode it.
    body_exact = body_sel & close
    if body_exact.sum() < MIN_COMPONENT:
        raise ExtractionError("body region too small")
    body_rows = rows[body_exact]
    body_cols = cols[body_exact]

    acc_sel = close & ~body_sel
    accessory, acc_color = "none", "none"
    occluded = None
    if acc_sel.sum() >= MIN_ACCESSORY:
        acc_counts = np.bincount(labels[acc_sel], minlength=len(_PAL_NAMES))
        acc_idx = int(acc_counts.argmax())
        if acc_counts[acc_idx] >= MIN_ACCESSORY:
            acc_pick = close & (labels == acc_idx)
            acc_rows = rows[acc_pick]
            acc_color = _PAL_NAMES[acc_idx]
            body_mid = (body_rows.min() + body_rows.max()) / 2.0
            if acc_rows.min() < body_rows.min() - 1.5:
                accessory = "hat"
                # The hat hides the body's top-center; keep that region out of
                # the shape comparison (expanded by 1 px for the seam row).
                occluded = np.zeros((h, w), dtype=bool)
                acc_cols = cols[acc_pick]
                occluded[
                    : acc_rows.max() + 2,
                    max(acc_cols.min() - 1, 0) : acc_cols.max() + 2,
                ] = True
            elif acc_rows.mean() < body_mid:
                accessory = "collar"
            else:
                accessory = "belt"

    shape = _fit_shape(body_rows, body_cols, h, w, occluded=occluded)
    return SpriteSpec(
        shape=shape,
        body_color=_PAL_NAMES[body_idx],
        accessory=accessory,
        accessory_color=acc_color,
    )


# --- evaluation -------------------------------------------------------------------


@dataclass
class EvalConfig:
    n_eval: int = 8
    steps: int = 20
    sampler: str = "ddim"
    seed: int = 0
    guidance_scale: float = 1.0
    cross_video: bool = True

    def __post_init__(self):
        if self.sampler not in ("ddim", "ancestral"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")


@dataclass
class MetricReport:
    temporal_consistency: float
    identity_match_rate: float
    appearance_mse: float
    cross_video_identity_rate: float | None
    extraction_error_rate: float
    zero_norm_pairs: int
    per_sample: list[dict]
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def headline(self) -> dict:
        out = {
            "temporal_consistency": self.temporal_consistency,
            "identity_match_rate": self.identity_match_rate,
            "appearance_mse": self.appearance_mse,
            "extraction_error_rate": self.extraction_error_rate,
        }
        if self.cross_video_identity_rate is not None:
            out["cross_video_identity_rate"] = self.cross_video_identity_rate
        return out


def _frame_spec(frame: np.ndarray) -> SpriteSpec | None:
    try:
        return extract_attributes(frame)
    except ExtractionError:
        return None


def _generate_videos(
    model: ContextDiT,
    samples: list[Sample],
    cfg: EvalConfig,
    rng: RngState,
    later_ids: np.ndarray | None = None,
) -> np.ndarray:
    """Sample videos for a batch; returns decoded frames [B, F, H, W, 3] in [0, 1]."""
    mcfg = model.cfg
    sched = make_schedule(mcfg.schedule_kind, mcfg.timesteps)
    refs = np.stack([s.ref_image for s in samples])
    with no_grad():
        ref_lat = model.codec.encode(Tensor(refs)).data
        first = np.stack([s.first_frame_prompt for s in samples])
        later = (
            later_ids
            if later_ids is not None
            else np.stack([s.later_frame_prompt for s in samples])
        )
        mem = model.encode_prompts(first, later, refs)
        b = len(samples)
        init = rng.normal((b,) + mcfg.video_latent_shape)
        if cfg.sampler == "ddim":
            lat = ddim_sample(
                model, mem, ref_lat, sched, cfg.steps, init,
                guidance_scale=cfg.guidance_scale,
            )
        else:
            lat = ancestral_sample(
                model, mem, ref_lat, sched, rng, cfg.steps, init_noise=init,
                guidance_scale=cfg.guidance_scale,
            )
        frames = model.codec.decode(Tensor(lat)).data
    return np.clip(frames, 0.0, 1.0)


def _alt_later_prompt(sample: Sample) -> list[int]:
    """A deterministic later-frame prompt differing in motion and scene."""
    m = MOTIONS[(MOTIONS.index(sample.motion.program) + 1) % len(MOTIONS)]
    b = BACKGROUNDS[(BACKGROUNDS.index(sample.scene.background) + 1) % len(BACKGROUNDS)]
    return later_frame_prompt(
        MotionProgram(program=m, speed=sample.motion.speed),
        SceneSpec(background=b, illumination=sample.scene.illumination),
    )


def evaluate(model_or_path, samples: list[Sample], cfg: EvalConfig | None = None) -> MetricReport:
    """Sample videos from the model and score them against ground truth."""
    cfg = cfg or EvalConfig()
    provenance: dict = {"eval_config": dataclasses.asdict(cfg)}
    if isinstance(model_or_path, (str, Path)):
        from .train import load_checkpoint

        loaded = load_checkpoint(model_or_path)
        model = loaded.model
        provenance["checkpoint"] = str(model_or_path)
        provenance["checkpoint_sha256"] = hashlib.sha256(
            Path(model_or_path).read_bytes()
        ).hexdigest()
    else:
        model = model_or_path
        provenance["checkpoint"] = "<in-memory>"
    if cfg.n_eval > len(samples):
        raise ConfigError(f"n_eval {cfg.n_eval} exceeds dataset size {len(samples)}")
    batch = samples[: cfg.n_eval]
    rng = RngState(cfg.seed)

    videos = _generate_videos(model, batch, cfg, rng.derive("noise"))
    alt_videos = None
    if cfg.cross_video:
        alt_later = np.stack([_alt_later_prompt(s) for s in batch])
        alt_videos = _generate_videos(
            model, batch, cfg, rng.derive("noise-alt"), later_ids=alt_later
        )

    per_sample = []
    for i, s in enumerate(batch):
        gen = videos[i]
        f_v = gen.shape[0]
        tc, zeros = temporal_consistency_with_flags(gen)
        gt_video, gt_masks, _ = ground_truth_video(s)
        specs = [_frame_spec(gen[f]) for f in range(f_v)]
        hits = sum(1 for sp in specs if sp == s.spec)
        errors = sum(1 for sp in specs if sp is None)
        app = []
        for f in range(f_v):
            m = gt_masks[f]
            if m.any():
                app.append(float(np.mean((gen[f][m] - gt_video[f][m]) ** 2)))
        row = {
            "sample_seed": s.seed,
            "temporal_consistency": tc,
            "zero_norm_pairs": zeros,
            "identity_match_rate": hits / f_v,
            "extraction_error_rate": errors / f_v,
            "appearance_mse": float(np.mean(app)) if app else float("nan"),
        }
        if alt_videos is not None:
            alt_specs = [_frame_spec(alt_videos[i][f]) for f in range(f_v)]
            agree = sum(
                1
                for a in specs
                for bsp in alt_specs
                if a is not None and a == bsp
            )
            row["cross_video_identity_rate"] = agree / (f_v * f_v)
        per_sample.append(row)

    def _mean(key):
        vals = [r[key] for r in per_sample if not np.isnan(r[key])]
        return float(np.mean(vals)) if vals else float("nan")

    return MetricReport(
        temporal_consistency=_mean("temporal_consistency"),
        identity_match_rate=_mean("identity_match_rate"),
        appearance_mse=_mean("appearance_mse"),
        cross_video_identity_rate=(
            _mean("cross_video_identity_rate") if cfg.cross_video else None
        ),
        extraction_error_rate=_mean("extraction_error_rate"),
        zero_norm_pairs=int(sum(r["zero_norm_pairs"] for r in per_sample)),
        per_sample=per_sample,
        provenance=provenance,
    )


# --- ablation suite ------------------------------------------------------------------

ABLATION_VARIANTS = ("full", "no_aug_prompt", "no_recon_loss", "no_attn_mod", "no_gap_rope")


def _variant_flags(name: str) -> dict:
    if name == "full":
        return {}
    if name not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {name!r}")
    return {name: True}


def ablation_suite(
    model_cfg,
    train_cfg,
    samples: list[Sample],
    variants: list[str],
    seeds: list[int],
    eval_cfg: EvalConfig | None = None,
    out_dir=None,
) -> dict:
    """Train and evaluate each ablation variant over several seeds.

    Returns {variant: {"per_seed": [headline dicts], "mean": {...}, "std": {...}}}
    and, when out_dir is given, writes report.json / report.csv / figures.
    """
    import dataclasses as dc

    from .train import TrainConfig, apply_ablations, train_model

    eval_cfg = eval_cfg or EvalConfig()
    results: dict = {}
    for variant in variants:
        flags = _variant_flags(variant)
        rows = []
        for seed in seeds:
            tcfg = dc.replace(train_cfg, seed=seed, **flags)
            mcfg = apply_ablations(model_cfg, tcfg)
            model, _ = train_model(samples, mcfg, tcfg)
            report = evaluate(model, samples, dc.replace(eval_cfg, seed=seed))
            rows.append(report.headline())
        keys = rows[0].keys()
        results[variant] = {
            "per_seed": rows,
            "mean": {k: float(np.mean([r[k] for r in rows])) for k in keys},
            "std": {k: float(np.std([r[k] for r in rows])) for k in keys},
            "seeds": list(seeds),
        }
    if out_dir is not None:
        from .report import write_ablation_report

        write_ablation_report(results, out_dir)
    return results
