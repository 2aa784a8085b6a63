"""Figure rendering for training and evaluation reports.

Figures land next to the CSV/JSON outputs so a run directory is
self-describing: loss curve for training, per-code F1 and label
frequency bars for evaluation.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import ContractError
from .metrics import MetricsReport, _f1_from
from .training import EpochRecord


def history_csv(history: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["epoch", "train_loss", "val_micro_f1", "val_micro_jaccard"])
    for record in history:
        writer.writerow([record.epoch, f"{record.train_loss:.6f}",
                         f"{record.validation.micro_f1:.6f}",
                         f"{record.validation.micro_jaccard:.6f}"])
    return buf.getvalue()


def render_loss_curve(history: Sequence[EpochRecord], path: str | Path) -> None:
    if not history:
        raise ContractError("cannot plot an empty training history")
    epochs = [r.epoch for r in history]
    losses = [r.train_loss for r in history]
    f1s = [r.validation.micro_f1 for r in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, losses, color="tab:blue", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss", color="tab:blue")
    twin = ax.twinx()
    twin.plot(epochs, f1s, color="tab:orange", label="validation micro-F1")
    twin.set_ylabel("validation micro-F1", color="tab:orange")
    twin.set_ylim(0.0, 1.05)
    ax.set_title("training progress")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_per_code_f1(report: MetricsReport, label_counts: Mapping[str, int],
                       path: str | Path) -> None:
    if not report.per_code:
        raise ContractError("report has no per-code counts to plot")
    codes = sorted(report.per_code)
    f1s = [_f1_from(*report.per_code[c]) for c in codes]
    freqs = [label_counts.get(c, 0) for c in codes]
    positions = range(len(codes))
    fig, ax = plt.subplots(figsize=(max(7, 0.45 * len(codes)), 4))
    ax.bar(positions, f1s, color="tab:blue", label="F1")
    ax.set_ylabel("per-code F1", color="tab:blue")
    ax.set_ylim(0.0, 1.05)
    ax.set_xticks(list(positions))
    ax.set_xticklabels(codes, rotation=60, ha="right", fontsize=7)
    twin = ax.twinx()
    twin.plot(list(positions), freqs, color="tab:orange", marker="o",
              linestyle="none", label="gold frequency")
    twin.set_ylabel("gold label frequency", color="tab:orange")
    twin.set_ylim(bottom=0)
    ax.set_title("evaluation by code")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
