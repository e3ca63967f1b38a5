"""Command-line entry point: gen-data, train, sample, eval, verify.

Exit codes: 0 success, 1 validation/verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ContextDitError


def _parse_size(text: str) -> tuple[int, int]:
    if "x" in text:
        h, w = text.lower().split("x", 1)
        return int(h), int(w)
    n = int(text)
    return n, n


def _load_prompt_ids(spec_text: str, vocab: tuple[str, ...]) -> tuple[list[int], list[int]]:
    """Prompt argument: inline JSON or a path to a JSON file.

    Keys first_frame / later_frame hold lists of vocabulary tokens (strings)
    or raw integer ids.
    """
    from .errors import VocabError

    path = Path(spec_text)
    raw = path.read_text(encoding="utf-8") if path.exists() else spec_text
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ContextDitError(f"prompt is neither a file nor valid JSON: {exc}") from exc
    index = {tok: i for i, tok in enumerate(vocab)}

    def to_ids(entries):
        ids = []
        for e in entries:
            if isinstance(e, int):
                if not 0 <= e < len(vocab):
                    raise VocabError(f"prompt id {e} outside vocabulary")
                ids.append(e)
            else:
                if e not in index:
                    raise VocabError(f"unknown prompt token {e!r}")
                ids.append(index[e])
        return ids

    return to_ids(obj.get("first_frame", [])), to_ids(obj.get("later_frame", []))


# --- subcommands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .data import GenConfig, generate_dataset, write_dataset

    h, w = _parse_size(args.size)
    cfg = GenConfig(
        n_samples=args.n_samples, seed=args.seed, frames=args.frames, height=h, width=w
    )
    samples = generate_dataset(cfg)
    write_dataset(samples, args.out, cfg)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .data import read_dataset
    from .model import ModelConfig
    from .report import write_loss_curve
    from .train import TrainConfig, apply_ablations, train_model

    cfg_blob = {}
    if args.config:
        cfg_blob = json.loads(Path(args.config).read_text(encoding="utf-8"))
    model_cfg = ModelConfig.from_dict(cfg_blob.get("model", {}))
    train_cfg = TrainConfig.from_dict(cfg_blob.get("train", {}))
    if args.steps is not None:
        train_cfg = dataclasses.replace(train_cfg, total_steps=args.steps)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    model_cfg = apply_ablations(model_cfg, train_cfg)

    samples, data_cfg = read_dataset(args.dataset)
    if (data_cfg.height, data_cfg.width, data_cfg.frames) != (
        model_cfg.height,
        model_cfg.width,
        model_cfg.frames,
    ):
        raise ContextDitError(
            f"dataset geometry {data_cfg.height}x{data_cfg.width}/f{data_cfg.frames} "
            f"does not match model config"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(
            {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()},
            indent=1,
            sort_keys=True,
        ),
        encoding="utf-8",
    )
    model, history = train_model(
        samples,
        model_cfg,
        train_cfg,
        log_path=out / "train_log.jsonl",
        checkpoint_path=out / "checkpoint.bin",
        resume_from=args.resume,
        progress=True,
    )
    if history:
        write_loss_curve(history, out / "loss_curve.png")
    print(f"checkpoint written to {out / 'checkpoint.bin'}")
    return 0


def _load_ref_image(path: str, height: int, width: int) -> np.ndarray:
    from .tensor import array_from_bytes

    p = Path(path)
    if not p.exists():
        raise ContextDitError(f"reference image not found: {p}")
    if p.suffix == ".bin":
        arr, _ = array_from_bytes(p.read_bytes())
    else:
        from PIL import Image

        arr = np.asarray(Image.open(p).convert("RGB"), dtype=np.float64) / 255.0
    if arr.shape != (height, width, 3):
        raise ContextDitError(f"reference image shape {arr.shape} != ({height}, {width}, 3)")
    return arr


def cmd_sample(args) -> int:
    from PIL import Image

    from .diffusion import ancestral_sample, ddim_sample, make_schedule
    from .report import write_frame_strip
    from .tensor import RngState, Tensor, array_to_bytes, no_grad
    from .train import load_checkpoint

    loaded = load_checkpoint(args.checkpoint)
    model, mcfg = loaded.model, loaded.model_cfg
    ref_image = _load_ref_image(args.ref, mcfg.height, mcfg.width)
    first_ids, later_ids = _load_prompt_ids(args.prompt, mcfg.vocab)
    if not later_ids:
        raise ContextDitError("prompt needs a non-empty later_frame part")

    rng = RngState(args.seed)
    with no_grad():
        ref_lat = model.codec.encode(Tensor(ref_image[None])).data
        mem = model.encode_prompts(np.array([first_ids]), np.array([later_ids]), ref_image[None])
        sched = make_schedule(mcfg.schedule_kind, mcfg.timesteps)
        init = rng.normal((1,) + mcfg.video_latent_shape)
        if args.sampler == "ddim":
            lat = ddim_sample(model, mem, ref_lat, sched, args.steps, init,
                              guidance_scale=args.guidance_scale)
        else:
            lat = ancestral_sample(model, mem, ref_lat, sched, rng, args.steps,
                                   init_noise=init, guidance_scale=args.guidance_scale)
        frames = model.codec.decode(Tensor(lat)).data[0]
    frames = np.clip(frames, 0.0, 1.0)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "video.bin").write_bytes(array_to_bytes(frames))
    for i, frame in enumerate(frames):
        img8 = (frame * 255.0).round().astype(np.uint8)
        Image.fromarray(img8).save(out / f"frame_{i:03d}.png")
    write_frame_strip(frames, out / "frames_strip.png", ref_image=ref_image)
    meta = {
        "checkpoint": str(args.checkpoint),
        "sampler": args.sampler,
        "steps": args.steps,
        "seed": args.seed,
        "guidance_scale": args.guidance_scale,
        "first_frame_prompt": first_ids,
        "later_frame_prompt": later_ids,
        "frames": int(frames.shape[0]),
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    print(f"wrote {frames.shape[0]} frames to {out}")
    return 0


def cmd_eval(args) -> int:
    from .data import read_dataset
    from .metrics import ABLATION_VARIANTS, EvalConfig, ablation_suite, evaluate
    from .report import write_eval_report, write_multi_seed_report

    samples, _ = read_dataset(args.dataset)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0]
    eval_cfg = EvalConfig(
        n_eval=min(args.n_eval, len(samples)), steps=args.steps, sampler=args.sampler
    )

    if args.ablations:
        from .model import ModelConfig
        from .train import TrainConfig

        cfg_blob = {}
        if args.config:
            cfg_blob = json.loads(Path(args.config).read_text(encoding="utf-8"))
        model_cfg = ModelConfig.from_dict(cfg_blob.get("model", {}))
        train_cfg = TrainConfig.from_dict(cfg_blob.get("train", {}))
        variants = [v.strip() for v in args.ablations.split(",")]
        for v in variants:
            if v not in ABLATION_VARIANTS:
                raise ContextDitError(f"unknown ablation variant {v!r}")
        results = ablation_suite(
            model_cfg, train_cfg, samples, variants, seeds, eval_cfg, out_dir=args.out
        )
        for variant, res in results.items():
            mean = res["mean"]
            print(
                f"{variant:16s} temp_con {mean['temporal_consistency']:.4f}  "
                f"identity {mean['identity_match_rate']:.4f}"
            )
        print(f"ablation report written to {args.out}")
        return 0

    if args.checkpoint is None:
        raise ContextDitError("eval needs --checkpoint (or --ablations)")
    reports = {}
    for seed in seeds:
        cfg = dataclasses.replace(eval_cfg, seed=seed)
        reports[seed] = evaluate(args.checkpoint, samples, cfg)
    if len(reports) == 1:
        write_eval_report(next(iter(reports.values())), args.out)
    else:
        write_multi_seed_report(reports, args.out)
    for seed, rep in reports.items():
        print(
            f"seed {seed}: temp_con {rep.temporal_consistency:.4f}  "
            f"identity {rep.identity_match_rate:.4f}  "
            f"appearance_mse {rep.appearance_mse:.5f}"
        )
    print(f"report written to {args.out}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_verification

    results = run_verification(sabotage=args.sabotage)
    if args.json:
        print(
            json.dumps(
                [dataclasses.asdict(r) for r in results], indent=1, sort_keys=True
            )
        )
    else:
        width = max(len(r.name) for r in results)
        for r in results:
            mark = "PASS" if r.passed else "FAIL"
            print(f"{mark}  {r.name:<{width}}  {r.seconds:6.2f}s  {r.detail}")
    failures = [r for r in results if not r.passed]
    if failures:
        print(f"{len(failures)} invariant(s) failed: " + ", ".join(r.name for r in failures),
              file=sys.stderr)
        return 1
    print(f"all {len(results)} invariants hold")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="context-dit",
        description="Reference-conditioned sprite-video diffusion at desk scale.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic sprite dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n-samples", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=int, default=8)
    g.add_argument("--size", default="32", help="image size, N or HxW")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--config", help="JSON file with {'model': {...}, 'train': {...}}")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--steps", type=int, help="override train.total_steps")
    t.add_argument("--seed", type=int, help="override train.seed")
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="sample a video from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--ref", required=True, help="reference image (.png or .bin)")
    s.add_argument("--prompt", required=True, help="JSON string or file")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--sampler", choices=("ddim", "ancestral"), default="ddim")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--guidance-scale", type=float, default=1.0)
    s.set_defaults(fn=cmd_sample)

    e = sub.add_parser("eval", help="evaluate a checkpoint or run the ablation suite")
    e.add_argument("--checkpoint")
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seeds", default="0", help="comma-separated evaluation seeds")
    e.add_argument("--n-eval", type=int, default=8)
    e.add_argument("--steps", type=int, default=20)
    e.add_argument("--sampler", choices=("ddim", "ancestral"), default="ddim")
    e.add_argument("--ablations", help="comma-separated variants to train+compare")
    e.add_argument("--config", help="model/train config JSON for --ablations")
    e.set_defaults(fn=cmd_eval)

    v = sub.add_parser("verify", help="run the built-in invariant catalog")
    v.add_argument("--json", action="store_true")
    v.add_argument("--sabotage", help=argparse.SUPPRESS)
    v.set_defaults(fn=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ContextDitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
