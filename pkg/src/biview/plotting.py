"""Static plots for run artifacts: loss curves, metric bars, sample grids."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_loss_curves", "plot_metric_rows", "plot_ablation", "render_samples"]


def _read_csv(path: Path | str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def plot_loss_curves(csv_path: Path | str, out_png: Path | str) -> Path:
    """One line per numeric loss column, step on the x axis."""
    header, rows = _read_csv(csv_path)
    columns = {name: [] for name in header}
    for row in rows:
        for name, cell in zip(header, row):
            columns[name].append(float(cell))
    steps = columns.pop("step", None) or list(range(1, len(rows) + 1))
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, values in columns.items():
        ax.plot(steps, values, label=name, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def plot_metric_rows(csv_path: Path | str, out_png: Path | str) -> Path:
    """Per-sample bars for every metric in a metrics.csv."""
    header, rows = _read_csv(csv_path)
    metric_names = header[2:]
    fig, axes = plt.subplots(1, len(metric_names), figsize=(3.2 * len(metric_names), 3.2))
    for ax, name in zip(np.atleast_1d(axes), metric_names):
        j = header.index(name)
        values = [float(r[j]) for r in rows]
        ax.bar(range(len(values)), values)
        ax.set_title(name)
        ax.set_xlabel("row")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def plot_ablation(csv_path: Path | str, out_png: Path | str) -> Path:
    """Mean value per variant for each metric from an ablation CSV."""
    header, rows = _read_csv(csv_path)
    variants: list[str] = []
    for row in rows:
        if row[0] not in variants:
            variants.append(row[0])
    metrics = sorted({row[2] for row in rows})
    fig, axes = plt.subplots(1, len(metrics), figsize=(3.0 * len(metrics), 3.4))
    for ax, metric in zip(np.atleast_1d(axes), metrics):
        means = []
        for variant in variants:
            values = [float(r[3]) for r in rows if r[0] == variant and r[2] == metric]
            means.append(np.mean(values) if values else np.nan)
        ax.bar(range(len(variants)), means)
        ax.set_xticks(range(len(variants)))
        ax.set_xticklabels(variants, rotation=45, ha="right", fontsize=7)
        ax.set_title(metric)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def render_samples(images, labels, out_png: Path | str, max_cols: int = 5) -> Path:
    """Image/label grid for a handful of samples."""
    n = min(len(images), max_cols)
    fig, axes = plt.subplots(2, n, figsize=(2.0 * n, 4.2))
    axes = np.atleast_2d(axes)
    for i in range(n):
        axes[0, i].imshow(np.asarray(images[i])[0], cmap="gray", vmin=0, vmax=1)
        axes[0, i].set_title(f"image {i}", fontsize=8)
        axes[1, i].imshow(np.asarray(labels[i]), cmap="viridis", interpolation="nearest")
        axes[1, i].set_title(f"label {i}", fontsize=8)
        for ax in (axes[0, i], axes[1, i]):
            ax.set_xticks([])
            ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)
