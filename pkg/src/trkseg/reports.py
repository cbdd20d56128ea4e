"""Render run artifacts into a human-readable report.

Consumes whatever a run directory contains (train_log.jsonl, report.json,
ablation.json) and writes aligned-column text, a per-sample CSV, and
matplotlib figures next to them.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text().splitlines() if line]


def plot_training_curves(log_path: Path, out_dir: Path) -> list[Path]:
    records = _read_jsonl(log_path)
    if not records:
        return []
    iters = [r["iter"] for r in records]
    fig, (ax_loss, ax_lr) = plt.subplots(1, 2, figsize=(10, 4))
    for key, label in (("loss_total", "total"), ("loss_txt", "text"),
                       ("loss_seg", "segmentation")):
        ax_loss.plot(iters, [r[key] for r in records], label=label, linewidth=1)
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("loss")
    ax_loss.set_yscale("log")
    ax_loss.legend()
    ax_loss.set_title("training losses")
    ax_lr.plot(iters, [r["lr"] for r in records], color="tab:green", linewidth=1)
    ax_lr.set_xlabel("iteration")
    ax_lr.set_ylabel("learning rate")
    ax_lr.set_title("schedule")
    fig.tight_layout()
    path = out_dir / "loss_curve.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def plot_eval_report(report: dict, out_dir: Path) -> list[Path]:
    paths = []
    groups = {**report.get("by_query_type", {}), **report.get("by_family", {})}
    if groups:
        fig, ax = plt.subplots(figsize=(7, 4))
        names = sorted(groups)
        for offset, metric in zip((-0.2, 0.0, 0.2), ("J", "F", "JandF")):
            xs = [i + offset for i in range(len(names))]
            ax.bar(xs, [groups[n].get(metric, 0.0) for n in names], width=0.2,
                   label=metric)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=20)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("score")
        ax.legend()
        ax.set_title("metrics by group")
        fig.tight_layout()
        path = out_dir / "metrics_by_group.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    samples = report.get("per_sample", [])
    if samples:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.hist([s["JandF"] for s in samples], bins=20, range=(0, 1),
                color="tab:blue")
        ax.set_xlabel("per-video J&F")
        ax.set_ylabel("count")
        ax.set_title("score distribution")
        fig.tight_layout()
        path = out_dir / "jandf_hist.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_ablation(ablation: dict, out_dir: Path) -> list[Path]:
    rows = ablation.get("rows", [])
    if not rows:
        return []
    fig, ax = plt.subplots(figsize=(8, 4))
    labels = [
        f"{r['objective']}/{r['strategy']}"
        + ("+post" if r.get("post_opt") else "")
        + f"/s{r['seed']}"
        for r in rows
    ]
    ax.bar(range(len(rows)), [r["JandF"] for r in rows], color="tab:purple")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("J&F")
    ax.set_ylim(0, 1.05)
    ax.set_title("ablation cells")
    fig.tight_layout()
    path = out_dir / "ablation_jandf.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def write_per_sample_csv(report: dict, out_dir: Path) -> Path | None:
    samples = report.get("per_sample", [])
    if not samples:
        return None
    path = out_dir / "per_sample.csv"
    fields = ["video_id", "query_type", "family", "J", "F", "JandF", "error"]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(samples)
    return path


def generate_report(run_dir: Path | str, out_dir: Path | str) -> list[Path]:
    """Collect artifacts from run_dir and render text + figures into out_dir."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    summary: list[str] = []

    log_path = next(iter(sorted(run_dir.rglob("train_log.jsonl"))), None)
    if log_path:
        written += plot_training_curves(log_path, out_dir)
        records = _read_jsonl(log_path)
        if records:
            first, last = records[0], records[-1]
            summary.append(
                f"training: {len(records)} iterations, "
                f"loss_total {first['loss_total']:.4f} -> {last['loss_total']:.4f}"
            )

    report_path = next(iter(sorted(run_dir.rglob("report.json"))), None)
    if report_path:
        report = json.loads(report_path.read_text())
        written += plot_eval_report(report, out_dir)
        csv_path = write_per_sample_csv(report, out_dir)
        if csv_path:
            written.append(csv_path)
        agg = report.get("aggregates", {})
        summary.append(
            "evaluation: "
            + "  ".join(f"{k}={v:.4f}" for k, v in sorted(agg.items()))
        )

    ablation_path = next(iter(sorted(run_dir.rglob("ablation.json"))), None)
    if ablation_path:
        ablation = json.loads(ablation_path.read_text())
        written += plot_ablation(ablation, out_dir)
        summary.append(f"ablation: {len(ablation.get('rows', []))} cells")

    text = "\n".join(summary) + ("\n" if summary else "no artifacts found\n")
    report_txt = out_dir / "report.txt"
    report_txt.write_text(text)
    written.append(report_txt)
    return written
