"""Training-history curves and model-comparison charts.

Figure builders are separated from the emit functions so callers (and
tests) can inspect series and bar counts without decoding pixels. PNG
metadata is stripped so emitted bytes depend only on the data.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .report import ComparisonReport
from .training import TrainingHistory

_PNG_METADATA = {"Software": None}


def build_accuracy_figure(history: TrainingHistory):
    epochs = np.arange(1, len(history) + 1)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, history.train_accuracy, label="train")
    ax.plot(epochs, history.val_accuracy, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_title("Model accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    return fig


def build_loss_figure(history: TrainingHistory):
    epochs = np.arange(1, len(history) + 1)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, history.train_loss, label="train")
    ax.plot(epochs, history.val_loss, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("Model loss")
    ax.legend()
    fig.tight_layout()
    return fig


def emit_history_plots(history: TrainingHistory, out_dir: str | Path,
                       stem: str = "") -> list[Path]:
    """Write accuracy and loss curves; returns the two file paths."""
    if len(history) == 0:
        raise ValueError("history is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = f"{stem}_" if stem else ""
    paths = []
    for name, builder in (("accuracy", build_accuracy_figure), ("loss", build_loss_figure)):
        fig = builder(history)
        dest = out_dir / f"{prefix}{name}.png"
        fig.savefig(dest, metadata=_PNG_METADATA)
        plt.close(fig)
        paths.append(dest)
    return paths


def build_comparison_figure(report: ComparisonReport):
    """Grouped bar chart: one group per class, one bar per model."""
    classes = report.class_set
    n_models = len(report.models)
    x = np.arange(len(classes))
    width = 0.8 / n_models
    fig, ax = plt.subplots(figsize=(1.8 * len(classes) + 2, 5))
    for j, model_id in enumerate(report.models):
        heights = [report.per_class[c][j] for c in classes]
        ax.bar(x + (j - (n_models - 1) / 2) * width, heights, width, label=model_id)
    ax.set_xticks(x)
    ax.set_xticklabels(classes)
    ax.set_ylabel("mean bootstrap accuracy")
    ax.set_title("Per-class accuracy by model")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    return fig


def emit_comparison_chart(report: ComparisonReport, out_dir: str | Path) -> Path:
    if not report.models:
        raise ValueError("report has no models")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig = build_comparison_figure(report)
    dest = out_dir / "comparison.png"
    fig.savefig(dest, metadata=_PNG_METADATA)
    plt.close(fig)
    return dest
