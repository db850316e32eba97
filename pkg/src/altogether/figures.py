"""Matplotlib figure rendering for the report paths: metric bars, per-item
score histograms, round-trend lines, and training loss curves.

All renderers write PNG files next to the delimited outputs; the Agg backend
is forced so this works headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .corpus import RoundStats  # noqa: E402
from .metrics import MetricReport  # noqa: E402

_DPI = 150


def save_metric_bars(report: MetricReport, path: str | Path) -> Path:
    """Bar chart of the bounded metrics; CIDEr is shown divided by 10 so a
    single [0, 1] axis serves every bar."""
    labels = ["bleu1", "meteor", "rouge_l", "cider_d/10", "np_p", "np_r", "np_f1"]
    values = [
        report.bleu1,
        report.meteor,
        report.rouge_l,
        report.cider_d / 10.0,
        report.np_precision,
        report.np_recall,
        report.np_f1,
    ]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    bars = ax.bar(labels, values, color="#4878b0")
    ax.bar_label(bars, fmt="%.3f", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    title = f"caption metrics over {report.n_items} items"
    if report.clip_score is not None:
        title += f"  (alignment {report.clip_score:.2f})"
    ax.set_title(title, fontsize=10)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_per_item_hist(
    per_item: Mapping[str, Mapping[str, float]], path: str | Path
) -> Path:
    keys = ("bleu1", "rouge_l", "np_f1")
    fig, axes = plt.subplots(1, len(keys), figsize=(9.6, 3.0), sharey=True)
    for ax, key in zip(axes, keys):
        ax.hist([row[key] for row in per_item.values()], bins=20, range=(0, 1), color="#4878b0")
        ax.set_title(key, fontsize=10)
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("items")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_round_trends(stats: Sequence[RoundStats], path: str | Path) -> Path:
    rounds = [s.round_no for s in stats]
    fig, ax_len = plt.subplots(figsize=(6.4, 3.6))
    ax_len.plot(rounds, [s.mean_length_words for s in stats], "o-", color="#4878b0", label="length (words)")
    ax_len.set_xlabel("annotation round")
    ax_len.set_ylabel("mean caption length (words)", color="#4878b0")
    ax_len.set_xticks(rounds)
    ax_ed = ax_len.twinx()
    ax_ed.plot(rounds, [s.mean_edit_distance for s in stats], "s--", color="#b04848", label="edit distance")
    ax_ed.set_ylabel("mean edit distance (chars)", color="#b04848")
    if any(s.mean_alignment is not None for s in stats):
        aligned = [(s.round_no, s.mean_alignment) for s in stats if s.mean_alignment is not None]
        ax_len.plot(
            [r for r, _ in aligned],
            [a for _, a in aligned],
            "^:",
            color="#48a068",
            label="alignment",
        )
    ax_len.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_loss_curve(history: Sequence[Mapping[str, float]], path: str | Path) -> Path:
    steps = [h["step"] for h in history]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(steps, [h["loss"] for h in history], color="#4878b0", label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("masked cross entropy (nats/token)")
    ax.set_yscale("log")
    ax.grid(alpha=0.3, which="both")
    ax_lr = ax.twinx()
    ax_lr.plot(steps, [h["lr"] for h in history], color="#b0a048", alpha=0.6, label="lr")
    ax_lr.set_ylabel("learning rate", color="#b0a048")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
