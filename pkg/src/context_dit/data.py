"""Synthetic sprite-video dataset generator.

Each sample is a short video of one procedurally rendered subject (shape +
body color + optional accessory) moving through a grayscale-patterned scene,
plus a reference image of the same subject at a different pose and
illumination on a blank background. Pose and illumination deltas are enforced
so the reference shares no trivially copyable pixels with frame 0, and every
attribute is recoverable from pixels alone.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, GenError
from .tensor import RngState, array_from_bytes, array_to_bytes

log = logging.getLogger(__name__)

SHAPES = ("circle", "square", "triangle")

# Saturated bodies vs. grayscale backgrounds: chroma separates subject from
# scene, and max channel 0.6 keeps values < 1 under illumination up to 1.5.
# No entry sits near the 50/50 blend of two others, so anti-aliased seams
# between body and accessory never classify as a third palette color.
PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (0.60, 0.10, 0.10),
    "green": (0.10, 0.60, 0.10),
    "blue": (0.12, 0.12, 0.60),
    "orange": (0.60, 0.33, 0.08),
    "purple": (0.45, 0.10, 0.60),
    "teal": (0.08, 0.55, 0.40),
}

ACCESSORIES = ("none", "hat", "collar", "belt")

MOTIONS = (
    "hold",
    "slide_right",
    "slide_left",
    "slide_up",
    "slide_down",
    "bounce_x",
    "bounce_y",
    "circle_cw",
    "circle_ccw",
    "grow",
    "shrink",
    "pulse",
    "diag_down",
    "diag_up",
    "zigzag_x",
    "drift_wave",
)

BACKGROUNDS = (
    "solid_dark",
    "solid_light",
    "h_stripes",
    "v_stripes",
    "checker",
    "gradient_h",
    "gradient_v",
    "diag_stripes",
)

ILLUM_RANGE = (0.5, 1.5)
POSE_DELTA_MIN = 0.15  # min reference-vs-frame0 center distance, fraction of W
ILLUM_DELTA_MIN = 0.2
SUPERSAMPLE = 4


def default_vocab() -> tuple[str, ...]:
    """Canonical prompt vocabulary; token ids are indices into this tuple."""
    tokens = [f"shape:{s}" for s in SHAPES]
    tokens += [f"color:{c}" for c in PALETTE]
    tokens += [f"acc:{a}" for a in ACCESSORIES]
    tokens += ["acccolor:none"] + [f"acccolor:{c}" for c in PALETTE]
    tokens += [f"motion:{m}" for m in MOTIONS]
    tokens += [f"scene:{b}" for b in BACKGROUNDS]
    tokens += ["special:same_person"]
    return tuple(tokens)


VOCAB = default_vocab()
VOCAB_INDEX = {tok: i for i, tok in enumerate(VOCAB)}


# --- domain types -------------------------------------------------------------


@dataclass(frozen=True)
class SpriteSpec:
    shape: str
    body_color: str
    accessory: str
    accessory_color: str

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}")
        if self.body_color not in PALETTE:
            raise ConfigError(f"unknown body color {self.body_color!r}")
        if self.accessory not in ACCESSORIES:
            raise ConfigError(f"unknown accessory {self.accessory!r}")
        if self.accessory == "none":
            if self.accessory_color != "none":
                raise ConfigError("accessory 'none' must have accessory_color 'none'")
        else:
            if self.accessory_color not in PALETTE:
                raise ConfigError(f"unknown accessory color {self.accessory_color!r}")
            if self.accessory_color == self.body_color:
                raise ConfigError("accessory color must differ from body color")

    @property
    def body_rgb(self) -> tuple[float, float, float]:
        return PALETTE[self.body_color]

    @property
    def accessory_rgb(self) -> tuple[float, float, float] | None:
        return None if self.accessory == "none" else PALETTE[self.accessory_color]

    def first_frame_prompt(self) -> list[int]:
        return [
            VOCAB_INDEX[f"shape:{self.shape}"],
            VOCAB_INDEX[f"color:{self.body_color}"],
            VOCAB_INDEX[f"acc:{self.accessory}"],
            VOCAB_INDEX[f"acccolor:{self.accessory_color}"],
        ]


@dataclass(frozen=True)
class MotionProgram:
    program: str
    speed: float = 1.0

    def __post_init__(self):
        if self.program not in MOTIONS:
            raise ConfigError(f"unknown motion program {self.program!r}")
        if self.speed < 0:
            raise ConfigError("speed must be non-negative")


@dataclass(frozen=True)
class SceneSpec:
    background: str
    illumination: float = 1.0

    def __post_init__(self):
        if self.background not in BACKGROUNDS:
            raise ConfigError(f"unknown background {self.background!r}")
        lo, hi = ILLUM_RANGE
        if not lo <= self.illumination <= hi:
            raise ConfigError(f"illumination {self.illumination} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class Pose:
    cx: float
    cy: float
    r: float


def later_frame_prompt(motion: MotionProgram, scene: SceneSpec) -> list[int]:
    return [
        VOCAB_INDEX[f"motion:{motion.program}"],
        VOCAB_INDEX[f"scene:{scene.background}"],
        VOCAB_INDEX["special:same_person"],
    ]


@dataclass
class Sample:
    ref_image: np.ndarray  # [H, W, 3]
    video: np.ndarray  # [f_v, H, W, 3]
    first_frame_prompt: list[int]
    later_frame_prompt: list[int]
    spec: SpriteSpec
    motion: MotionProgram
    scene: SceneSpec
    base_pose: Pose
    ref_pose: Pose
    ref_illum: float
    seed: int


# --- rasterization ---------------------------------------------------------------

# Vertical extents of the subject relative to the pose radius; the hat rides
# above the body, the collar/belt bands are carved inside it. Band thickness
# 0.4r guarantees at least one fully covered pixel row down to r ~ 5.5 px,
# and every body leaves >= 0.3r of clear body above/below each band.
HAT_TOP, HAT_BOTTOM, HAT_HALFWIDTH = -1.45, -0.68, 0.70
COLLAR_BAND = (-0.55, -0.15)
BELT_BAND = (0.12, 0.58)
SQUARE_HALF = 0.85
TRI_TOP, TRI_APEX, TRI_HALFWIDTH = -0.85, 1.0, 0.95
SUBJECT_EXTENT = 1.5  # conservative radius multiple covering body + hat


def _grid(h: int, w: int, ss: int) -> tuple[np.ndarray, np.ndarray]:
    ys = (np.arange(h * ss) + 0.5) / ss
    xs = (np.arange(w * ss) + 0.5) / ss
    return ys[:, None], xs[None, :]


def _body_inside(shape: str, pose: Pose, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    dx = xx - pose.cx
    dy = yy - pose.cy
    r = pose.r
    if shape == "circle":
        return dx * dx + dy * dy <= r * r
    if shape == "square":
        s = SQUARE_HALF * r
        return (np.abs(dx) <= s) & (np.abs(dy) <= s)
    # Downward-pointing triangle: wide top edge, apex at the bottom.
    top, apex_y, halfw = TRI_TOP * r, TRI_APEX * r, TRI_HALFWIDTH * r
    frac = (apex_y - dy) / (apex_y - top)  # 1 at top edge, 0 at apex
    return (dy >= top) & (dy <= apex_y) & (np.abs(dx) <= halfw * frac)


def _accessory_inside(
    spec: SpriteSpec, pose: Pose, yy: np.ndarray, xx: np.ndarray, body: np.ndarray
) -> np.ndarray:
    if spec.accessory == "none":
        return np.zeros_like(body)
    dx = xx - pose.cx
    dy = yy - pose.cy
    r = pose.r
    if spec.accessory == "hat":
        return (
            (dy >= HAT_TOP * r)
            & (dy <= HAT_BOTTOM * r)
            & (np.abs(dx) <= HAT_HALFWIDTH * r)
        )
    band = COLLAR_BAND if spec.accessory == "collar" else BELT_BAND
    return body & (dy >= band[0] * r) & (dy <= band[1] * r)


def _downsample(mask: np.ndarray, h: int, w: int, ss: int) -> np.ndarray:
    return mask.reshape(h, ss, w, ss).mean(axis=(1, 3))


def shape_coverage(shape: str, pose: Pose, h: int, w: int, ss: int = SUPERSAMPLE) -> np.ndarray:
    """Anti-aliased body coverage in [0, 1]; also used as extractor template."""
    yy, xx = _grid(h, w, ss)
    return _downsample(_body_inside(shape, pose, yy, xx).astype(np.float64), h, w, ss)


def background_image(name: str, h: int, w: int) -> np.ndarray:
    """Grayscale scene pattern in [0.15, 0.45] (zero chroma by construction)."""
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    dark, light = 0.20, 0.35
    if name == "solid_dark":
        g = np.full((h, w), dark)
    elif name == "solid_light":
        g = np.full((h, w), light)
    elif name == "h_stripes":
        g = np.where((rows // 4) % 2 == 0, dark, light) + np.zeros((1, w))
    elif name == "v_stripes":
        g = np.where((cols // 4) % 2 == 0, dark, light) + np.zeros((h, 1))
    elif name == "checker":
        g = np.where(((rows // 4) + (cols // 4)) % 2 == 0, dark, light)
    elif name == "gradient_h":
        g = 0.15 + 0.30 * (cols / max(w - 1, 1)) + np.zeros((h, 1))
    elif name == "gradient_v":
        g = 0.15 + 0.30 * (rows / max(h - 1, 1)) + np.zeros((1, w))
    elif name == "diag_stripes":
        g = np.where(((rows + cols) // 4) % 2 == 0, dark, light)
    else:
        raise ConfigError(f"unknown background {name!r}")
    return np.repeat(g[:, :, None], 3, axis=2).astype(np.float64)


def render_frame(
    spec: SpriteSpec,
    pose: Pose,
    scene: SceneSpec | None,
    h: int,
    w: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Render one frame; returns (image [h, w, 3], subject mask [h, w] bool).

    `scene=None` renders on a blank (black) background at illumination given by
    the caller via a separate multiply; here None means illum 1.0 and black bg.
    """
    yy, xx = _grid(h, w, SUPERSAMPLE)
    body_hi = _body_inside(spec.shape, pose, yy, xx)
    acc_hi = _accessory_inside(spec, pose, yy, xx, body_hi)
    body_cov = _downsample(body_hi.astype(np.float64), h, w, SUPERSAMPLE)
    acc_cov = _downsample(acc_hi.astype(np.float64), h, w, SUPERSAMPLE)

    if scene is None:
        img = np.zeros((h, w, 3), dtype=np.float64)
        illum = 1.0
    else:
        img = background_image(scene.background, h, w)
        illum = scene.illumination

    body_rgb = np.asarray(spec.body_rgb)
    img = img * (1.0 - body_cov[:, :, None]) + body_rgb * body_cov[:, :, None]
    if spec.accessory != "none":
        acc_rgb = np.asarray(spec.accessory_rgb)
        img = img * (1.0 - acc_cov[:, :, None]) + acc_rgb * acc_cov[:, :, None]
    img = img * illum
    mask = (body_cov + acc_cov) > 0.5
    return img, mask


def _pose_in_frame(pose: Pose, h: int, w: int) -> bool:
    ext = SUBJECT_EXTENT * pose.r
    return (
        pose.cx - ext >= 0.5
        and pose.cx + ext <= w - 0.5
        and pose.cy - ext >= 0.5
        and pose.cy + ext <= h - 0.5
    )


# Motion programs map normalized time u in [0, 1] to (dx, dy, dr) offsets in
# units of (W, W, r). Speed scales every offset, so speed 0 is a static video.
def _motion_offsets(program: str, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    zero = np.zeros_like(u)
    amp = 0.11  # fraction of frame width; keeps every program feasible at 32 px
    grow = 0.16
    two_pi = 2.0 * np.pi
    if program == "hold":
        return zero, zero, zero
    if program == "slide_right":
        return amp * u, zero, zero
    if program == "slide_left":
        return -amp * u, zero, zero
    if program == "slide_up":
        return zero, -amp * u, zero
    if program == "slide_down":
        return zero, amp * u, zero
    if program == "bounce_x":
        return amp * np.sin(two_pi * u), zero, zero
    if program == "bounce_y":
        return zero, amp * np.sin(two_pi * u), zero
    if program == "circle_cw":
        return amp * (np.cos(two_pi * u) - 1.0) / 2, amp * np.sin(two_pi * u) / 2, zero
    if program == "circle_ccw":
        return amp * (np.cos(two_pi * u) - 1.0) / 2, -amp * np.sin(two_pi * u) / 2, zero
    if program == "grow":
        return zero, zero, grow * u
    if program == "shrink":
        return zero, zero, -grow * u
    if program == "pulse":
        return zero, zero, grow * np.sin(two_pi * u) / 2
    if program == "diag_down":
        return amp * u * 0.707, amp * u * 0.707, zero
    if program == "diag_up":
        return amp * u * 0.707, -amp * u * 0.707, zero
    if program == "zigzag_x":
        tri = 2.0 * np.abs(2.0 * u - np.floor(2.0 * u + 0.5))
        return amp * (tri - 0.0) / 2, zero, zero
    if program == "drift_wave":
        return amp * u * 0.7, amp * 0.4 * np.sin(two_pi * u), zero
    raise ConfigError(f"unknown motion program {program!r}")


def motion_poses(motion: MotionProgram, base: Pose, f_v: int, h: int, w: int) -> list[Pose]:
    u = np.zeros(1) if f_v == 1 else np.arange(f_v, dtype=np.float64) / (f_v - 1)
    dx, dy, dr = _motion_offsets(motion.program, u)
    poses = [
        Pose(
            cx=base.cx + motion.speed * dx[i] * w,
            cy=base.cy + motion.speed * dy[i] * w,
            r=base.r * (1.0 + motion.speed * dr[i]),
        )
        for i in range(f_v)
    ]
    return poses


def render_video(
    spec: SpriteSpec,
    motion: MotionProgram,
    scene: SceneSpec,
    f_v: int,
    h: int,
    w: int,
    base_pose: Pose | None = None,
) -> tuple[np.ndarray, np.ndarray, list[Pose]]:
    """Render the ground-truth video; returns (video, subject masks, poses)."""
    if base_pose is None:
        base_pose = Pose(cx=w / 2.0, cy=h / 2.0, r=0.2 * min(h, w))
    poses = motion_poses(motion, base_pose, f_v, h, w)
    for i, p in enumerate(poses):
        if not _pose_in_frame(p, h, w):
            raise ConfigError(
                f"subject leaves the frame at t={i} for {motion.program} "
                f"(speed {motion.speed})"
            )
    frames = np.empty((f_v, h, w, 3), dtype=np.float64)
    masks = np.empty((f_v, h, w), dtype=bool)
    for i, p in enumerate(poses):
        frames[i], masks[i] = render_frame(spec, p, scene, h, w)
    return frames, masks, poses


def make_reference(
    spec: SpriteSpec,
    video_scene: SceneSpec,
    frame0_pose: Pose,
    rng: RngState,
    h: int,
    w: int,
    max_tries: int = 100,
) -> tuple[np.ndarray, Pose, float]:
    """Render the same subject at a fresh pose/illumination on a blank background.

    Pose distance and illumination delta against video frame 0 must clear the
    anti-copy thresholds; resamples up to `max_tries` before giving up.
    """
    lo, hi = ILLUM_RANGE
    for _ in range(max_tries):
        r = float(rng.uniform(0.19, 0.25)) * min(h, w)
        ext = SUBJECT_EXTENT * r
        cx = float(rng.uniform(ext + 0.5, w - ext - 0.5))
        cy = float(rng.uniform(ext + 0.5, h - ext - 0.5))
        illum = float(rng.uniform(lo, hi))
        pose = Pose(cx=cx, cy=cy, r=r)
        dist = np.hypot(cx - frame0_pose.cx, cy - frame0_pose.cy) / w
        if dist < POSE_DELTA_MIN:
            continue
        if abs(illum - video_scene.illumination) < ILLUM_DELTA_MIN:
            continue
        img, _ = render_frame(spec, pose, None, h, w)
        return img * illum, pose, illum
    raise GenError(
        f"could not draw a reference pose/illumination in {max_tries} tries"
    )


# --- sample generation -------------------------------------------------------------


@dataclass
class GenConfig:
    n_samples: int = 64
    seed: int = 0
    frames: int = 8
    height: int = 32
    width: int = 32

    def __post_init__(self):
        if self.n_samples <= 0 or self.frames <= 0:
            raise ConfigError("n_samples and frames must be positive")
        if self.height < 16 or self.width < 16:
            raise ConfigError("frames below 16x16 leave no room for the subject")


def _draw_spec(rng: RngState) -> SpriteSpec:
    colors = list(PALETTE)
    shape = SHAPES[int(rng.integers(0, len(SHAPES)))]
    body = colors[int(rng.integers(0, len(colors)))]
    accessory = ACCESSORIES[int(rng.integers(0, len(ACCESSORIES)))]
    if accessory == "none":
        acc_color = "none"
    else:
        others = [c for c in colors if c != body]
        acc_color = others[int(rng.integers(0, len(others)))]
    return SpriteSpec(shape, body, accessory, acc_color)


def _draw_base_pose(
    motion: MotionProgram, rng: RngState, f_v: int, h: int, w: int, max_tries: int = 50
) -> Pose:
    u = np.zeros(1) if f_v == 1 else np.arange(f_v, dtype=np.float64) / (f_v - 1)
    dx, dy, dr = _motion_offsets(motion.program, u)
    for _ in range(max_tries):
        r = float(rng.uniform(0.19, 0.25)) * min(h, w)
        r_max = r * float(np.max(1.0 + motion.speed * dr))
        ext = SUBJECT_EXTENT * r_max
        x_off = motion.speed * dx * w
        y_off = motion.speed * dy * w
        x_lo, x_hi = ext + 0.5 - x_off.min(), w - ext - 0.5 - x_off.max()
        y_lo, y_hi = ext + 0.5 - y_off.min(), h - ext - 0.5 - y_off.max()
        if x_lo >= x_hi or y_lo >= y_hi:
            continue
        cx = float(rng.uniform(x_lo, x_hi))
        cy = float(rng.uniform(y_lo, y_hi))
        return Pose(cx=cx, cy=cy, r=r)
    raise GenError(f"no in-frame pose for {motion.program} at speed {motion.speed}")


def generate_sample(cfg: GenConfig, sample_seed: int) -> Sample:
    """Deterministic sample from (config, seed)."""
    rng = RngState(sample_seed)
    spec = _draw_spec(rng)
    scene = SceneSpec(
        background=BACKGROUNDS[int(rng.integers(0, len(BACKGROUNDS)))],
        illumination=float(rng.uniform(*ILLUM_RANGE)),
    )
    motion = MotionProgram(
        program=MOTIONS[int(rng.integers(0, len(MOTIONS)))],
        speed=float(rng.uniform(0.6, 1.4)),
    )
    base_pose = _draw_base_pose(motion, rng, cfg.frames, cfg.height, cfg.width)
    video, _, poses = render_video(
        spec, motion, scene, cfg.frames, cfg.height, cfg.width, base_pose
    )
    ref_image, ref_pose, ref_illum = make_reference(
        spec, scene, poses[0], rng, cfg.height, cfg.width
    )
    return Sample(
        ref_image=ref_image,
        video=video,
        first_frame_prompt=spec.first_frame_prompt(),
        later_frame_prompt=later_frame_prompt(motion, scene),
        spec=spec,
        motion=motion,
        scene=scene,
        base_pose=base_pose,
        ref_pose=ref_pose,
        ref_illum=ref_illum,
        seed=sample_seed,
    )


def ground_truth_video(sample: Sample) -> tuple[np.ndarray, np.ndarray, list[Pose]]:
    """Re-render the sample's clean video and subject masks from its metadata."""
    f_v, h, w, _ = sample.video.shape
    return render_video(
        sample.spec, sample.motion, sample.scene, f_v, h, w, sample.base_pose
    )


def validate_sample(sample: Sample) -> bool:
    """Deterministic replacement for a learned validity filter.

    Checks: subject fully visible in every frame and in the reference,
    anti-copy deltas against frame 0, and an exact attribute round-trip
    through the extractor on the reference and every video frame.
    """
    from .metrics import extract_attributes  # local import to avoid a cycle

    f_v, h, w, _ = sample.video.shape
    try:
        _, masks, poses = ground_truth_video(sample)
    except ConfigError:
        log.warning("sample %d: subject leaves the frame", sample.seed)
        return False
    border = np.zeros((h, w), dtype=bool)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True
    for i in range(f_v):
        if (masks[i] & border).any():
            log.warning("sample %d: subject clipped at border in frame %d", sample.seed, i)
            return False
    if not _pose_in_frame(sample.ref_pose, h, w):
        log.warning("sample %d: reference subject clipped", sample.seed)
        return False

    mse0 = float(np.mean((sample.ref_image - sample.video[0]) ** 2))
    dist = np.hypot(
        sample.ref_pose.cx - poses[0].cx, sample.ref_pose.cy - poses[0].cy
    ) / w
    dillum = abs(sample.ref_illum - sample.scene.illumination)
    if mse0 <= 0.0 or dist < POSE_DELTA_MIN or dillum < ILLUM_DELTA_MIN:
        log.warning("sample %d: anti-copy constraint violated", sample.seed)
        return False

    try:
        if extract_attributes(sample.ref_image) != sample.spec:
            log.warning("sample %d: reference attributes do not round-trip", sample.seed)
            return False
        for i in range(f_v):
            if extract_attributes(sample.video[i], masks[i]) != sample.spec:
                log.warning("sample %d: frame %d attributes do not round-trip", sample.seed, i)
                return False
    except Exception:
        log.warning("sample %d: attribute extraction failed", sample.seed)
        return False
    return True


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("CONTEXT_DIT_THREADS", "1")))
    except ValueError:
        return 1


def generate_dataset(cfg: GenConfig) -> list[Sample]:
    """Generate cfg.n_samples valid samples; pure function of (config, seed)."""
    master = RngState(cfg.seed)

    def build(i: int) -> Sample:
        for attempt in range(20):
            s = generate_sample(cfg, master.derive(i * 1000 + attempt).seed)
            if validate_sample(s):
                return s
            log.warning("sample %d attempt %d invalid, resampling", i, attempt)
        raise GenError(f"could not generate a valid sample for index {i}")

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(build, range(cfg.n_samples)))
    return [build(i) for i in range(cfg.n_samples)]


# --- on-disk format ------------------------------------------------------------------

DATASET_VERSION = 1


def _sample_record(s: Sample, filename: str) -> dict:
    return {
        "file": filename,
        "seed": s.seed,
        "spec": dataclasses.asdict(s.spec),
        "motion": dataclasses.asdict(s.motion),
        "scene": dataclasses.asdict(s.scene),
        "base_pose": dataclasses.asdict(s.base_pose),
        "ref_pose": dataclasses.asdict(s.ref_pose),
        "ref_illum": s.ref_illum,
        "first_frame_prompt": s.first_frame_prompt,
        "later_frame_prompt": s.later_frame_prompt,
    }


def write_dataset(samples: list[Sample], out_dir, cfg: GenConfig) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i, s in enumerate(samples):
        name = f"sample_{i:05d}.bin"
        with open(out / name, "wb") as fh:
            fh.write(array_to_bytes(s.ref_image))
            fh.write(array_to_bytes(s.video))
        records.append(_sample_record(s, name))
    manifest = {
        "version": DATASET_VERSION,
        "n_samples": len(samples),
        "config": dataclasses.asdict(cfg),
        "vocab": list(VOCAB),
        "samples": records,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def read_dataset(in_dir) -> tuple[list[Sample], GenConfig]:
    """Load a dataset directory; unknown manifest fields are ignored."""
    root = Path(in_dir)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise FormatError(f"missing manifest: {mpath}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt manifest: {mpath}") from exc
    records = manifest.get("samples", [])
    if manifest.get("n_samples") != len(records):
        raise FormatError(f"manifest sample count mismatch in {mpath}")
    known = {f.name for f in dataclasses.fields(GenConfig)}
    cfg = GenConfig(**{k: v for k, v in manifest.get("config", {}).items() if k in known})
    samples = []
    for rec in records:
        fpath = root / rec["file"]
        if not fpath.exists():
            raise FormatError(f"missing sample file: {fpath}")
        buf = fpath.read_bytes()
        ref, off = array_from_bytes(buf)
        video, off = array_from_bytes(buf, off)
        if off != len(buf):
            raise FormatError(f"trailing bytes in {fpath}")
        samples.append(
            Sample(
                ref_image=ref,
                video=video,
                first_frame_prompt=list(rec["first_frame_prompt"]),
                later_frame_prompt=list(rec["later_frame_prompt"]),
                spec=SpriteSpec(**rec["spec"]),
                motion=MotionProgram(**rec["motion"]),
                scene=SceneSpec(**rec["scene"]),
                base_pose=Pose(**rec["base_pose"]),
                ref_pose=Pose(**rec["ref_pose"]),
                ref_illum=float(rec["ref_illum"]),
                seed=int(rec["seed"]),
            )
        )
    return samples, cfg
