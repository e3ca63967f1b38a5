"""Report writers: JSON + flat CSV, with matplotlib figures rendered alongside.

Every eval/ablation output directory gets the machine-readable files plus PNG
charts of the same numbers, and the training log can be turned into a loss
curve. Figures are rendered with the Agg backend so this works headless.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import FormatError
from .metrics import MetricReport


def write_report_json(report: MetricReport, path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=1, sort_keys=True), encoding="utf-8"
    )


def read_report_json(path) -> MetricReport:
    try:
        return MetricReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"corrupt report file: {path}") from exc


def write_report_csv(rows: list[dict], path) -> None:
    """Flat CSV, one row per variant x metric."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "metric", "value", "std", "n_seeds"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _metric_rows(variant: str, means: dict, stds: dict | None, n_seeds: int) -> list[dict]:
    rows = []
    for metric, value in means.items():
        rows.append(
            {
                "variant": variant,
                "metric": metric,
                "value": value,
                "std": (stds or {}).get(metric, 0.0),
                "n_seeds": n_seeds,
            }
        )
    return rows


def _metrics_figure(per_variant: dict[str, dict], path) -> None:
    metrics = sorted({m for d in per_variant.values() for m in d})
    variants = list(per_variant)
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(metrics), 3.5))
    width = 0.8 / max(len(variants), 1)
    xs = np.arange(len(metrics))
    for i, variant in enumerate(variants):
        vals = [per_variant[variant].get(m, np.nan) for m in metrics]
        ax.bar(xs + i * width, vals, width, label=variant)
    ax.set_xticks(xs + width * (len(variants) - 1) / 2)
    ax.set_xticklabels(metrics, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("value")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_eval_report(report: MetricReport, out_dir) -> dict[str, Path]:
    """Write report.json, report.csv and the metric/per-sample figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / "report.json",
        "csv": out / "report.csv",
        "metrics_png": out / "metrics.png",
        "per_sample_png": out / "per_sample.png",
    }
    write_report_json(report, paths["json"])
    write_report_csv(_metric_rows("model", report.headline(), None, 1), paths["csv"])
    _metrics_figure({"model": report.headline()}, paths["metrics_png"])

    fig, ax = plt.subplots(figsize=(6, 3.5))
    xs = np.arange(len(report.per_sample))
    ax.plot(xs, [r["temporal_consistency"] for r in report.per_sample], "o-", label="temporal consistency")
    ax.plot(xs, [r["identity_match_rate"] for r in report.per_sample], "s-", label="identity match rate")
    ax.set_xlabel("eval sample")
    ax.set_ylim(-1.05, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(paths["per_sample_png"], dpi=120)
    plt.close(fig)
    return paths


def write_ablation_report(results: dict, out_dir) -> dict[str, Path]:
    """Per-variant means/stds plus deltas against the full model."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / "report.json",
        "csv": out / "report.csv",
        "png": out / "ablation_metrics.png",
    }
    payload = dict(results)
    if "full" in results:
        full_means = results["full"]["mean"]
        deltas = {
            variant: {
                m: results[variant]["mean"].get(m, float("nan")) - v
                for m, v in full_means.items()
            }
            for variant in results
            if variant != "full"
        }
        payload = {"variants": results, "delta_vs_full": deltas}
    Path(paths["json"]).write_text(
        json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8"
    )
    rows = []
    for variant, res in results.items():
        rows.extend(_metric_rows(variant, res["mean"], res["std"], len(res["seeds"])))
    write_report_csv(rows, paths["csv"])
    _metrics_figure({v: res["mean"] for v, res in results.items()}, paths["png"])
    return paths


def write_multi_seed_report(reports: dict, out_dir) -> dict[str, Path]:
    """Aggregate several single-seed MetricReports into one directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / "report.json",
        "csv": out / "report.csv",
        "png": out / "metrics.png",
    }
    headlines = {f"seed{seed}": rep.headline() for seed, rep in reports.items()}
    metrics = sorted({m for d in headlines.values() for m in d})
    mean = {m: float(np.mean([d[m] for d in headlines.values()])) for m in metrics}
    payload = {
        "per_seed": {str(seed): rep.to_dict() for seed, rep in reports.items()},
        "mean": mean,
    }
    paths["json"].write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")
    rows = []
    for name, d in headlines.items():
        rows.extend(_metric_rows(name, d, None, 1))
    rows.extend(_metric_rows("mean", mean, None, len(reports)))
    write_report_csv(rows, paths["csv"])
    _metrics_figure({**headlines, "mean": mean}, paths["png"])
    return paths


def write_loss_curve(history: list[dict], path) -> None:
    """Loss curve from training history rows (or a parsed JSON-lines log)."""
    steps = [row["step"] for row in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for key in ("l_total", "l_gen", "l_ref"):
        ax.plot(steps, [row[key] for row in history], label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def read_training_log(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_frame_strip(frames: np.ndarray, path, ref_image: np.ndarray | None = None) -> None:
    """Horizontal strip of video frames (optionally led by the reference)."""
    imgs = list(frames)
    titles = [f"t={i}" for i in range(len(imgs))]
    if ref_image is not None:
        imgs = [ref_image] + imgs
        titles = ["ref"] + titles
    fig, axes = plt.subplots(1, len(imgs), figsize=(1.4 * len(imgs), 1.8))
    if len(imgs) == 1:
        axes = [axes]
    for ax, img, title in zip(axes, imgs, titles):
        ax.imshow(np.clip(img, 0.0, 1.0))
        ax.set_title(title, fontsize=7)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
