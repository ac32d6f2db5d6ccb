"""Figures for training logs and evaluation reports, rendered to files with the Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import numpy as np
from matplotlib import pyplot as plt

LOSS_COLOURS = {"csl": "#1f77b4", "global": "#2ca02c", "local": "#d62728", "total": "#333333"}


def _finish(fig: plt.Figure, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss_curves(records, path: str | Path, smooth: int = 1) -> Path:
    """Loss terms and learning rate against step, from a list of MetricsRecord."""
    steps = np.array([r.step for r in records])
    series = {
        "csl": np.array([r.csl for r in records]),
        "global": np.array([r.global_ for r in records]),
        "local": np.array([r.local for r in records]),
        "total": np.array([r.total for r in records]),
    }
    fig, (ax, ax_lr) = plt.subplots(2, 1, figsize=(7, 5.5), sharex=True, height_ratios=(3, 1))
    for name, values in series.items():
        if name in ("global", "local") and not np.any(values):
            continue
        if smooth > 1 and len(values) >= smooth:
            values = np.convolve(values, np.ones(smooth) / smooth, mode="valid")
            x = steps[smooth - 1 :]
        else:
            x = steps
        ax.plot(x, values, label=name, color=LOSS_COLOURS[name], lw=1.2)
    ax.set_ylabel("loss")
    ax.legend(frameon=False, ncol=4, fontsize=8)
    ax.grid(alpha=0.3)
    ax_lr.plot(steps, [r.lr for r in records], color="#7f7f7f", lw=1.0)
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("step")
    ax_lr.grid(alpha=0.3)
    return _finish(fig, path)


def plot_per_class_accuracy(
    predictions: Sequence[int], labels: Sequence[int], path: str | Path, title: str = "", class_names=None
) -> Path:
    pred, lab = np.asarray(predictions), np.asarray(labels)
    classes = np.unique(lab)
    acc = np.array([(pred[lab == c] == c).mean() for c in classes])
    fig, ax = plt.subplots(figsize=(max(4, 0.45 * len(classes) + 2), 3.2))
    ax.bar(np.arange(len(classes)), acc * 100, color="#4c72b0")
    ax.axhline((pred == lab).mean() * 100, color="k", ls="--", lw=0.8, label="overall")
    names = class_names if class_names is not None else [str(c) for c in classes]
    ax.set_xticks(np.arange(len(classes)), [names[int(c)] if int(c) < len(names) else str(c) for c in classes], fontsize=8)
    ax.set_ylim(0, 100)
    ax.set_ylabel("top-1 (%)")
    ax.legend(frameon=False, fontsize=8)
    if title:
        ax.set_title(title, fontsize=10)
    return _finish(fig, path)


def plot_similarity_histogram(embeddings, labels, path: str | Path, bins: int = 60) -> Path:
    """Distribution of same-class vs other-class cosine similarities (self-pairs excluded)."""
    x = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(labels)
    gram = x @ x.T
    same = lab[:, None] == lab[None, :]
    off = ~np.eye(len(lab), dtype=bool)
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    edges = np.linspace(-1, 1, bins + 1)
    ax.hist(gram[same & off], bins=edges, density=True, alpha=0.6, label="same class", color="#dd8452")
    ax.hist(gram[~same], bins=edges, density=True, alpha=0.6, label="other class", color="#4c72b0")
    ax.set_xlabel("cosine similarity")
    ax.set_ylabel("density")
    ax.legend(frameon=False, fontsize=8)
    return _finish(fig, path)


def plot_arm_comparison(rows: list[dict], path: str | Path, metrics=("knn_top1", "phi")) -> Path:
    """One panel per metric, bars = median over seeds, dots = individual seeds (if given)."""
    fig, axes = plt.subplots(1, len(metrics), figsize=(4.2 * len(metrics), 3.4))
    axes = np.atleast_1d(axes)
    arms = [r["arm"] for r in rows]
    for ax, metric in zip(axes, metrics):
        values = [r[metric] for r in rows]
        ax.bar(np.arange(len(arms)), values, color="#8da0cb")
        for i, r in enumerate(rows):
            seeds = r.get("per_seed", {}).get(metric, [])
            ax.scatter([i] * len(seeds), seeds, color="k", s=10, zorder=3)
        lo, hi = min(values), max(values)
        pad = max((hi - lo) * 0.6, 1e-3)
        ax.set_ylim(lo - pad, hi + pad)
        ax.set_xticks(np.arange(len(arms)), arms, rotation=30, ha="right", fontsize=8)
        ax.set_title(metric, fontsize=10)
        ax.grid(axis="y", alpha=0.3)
    return _finish(fig, path)
