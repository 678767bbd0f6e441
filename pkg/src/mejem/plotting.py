"""Matplotlib figures for score distributions, loss curves and ablations."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"id": "#1f77b4", "ood": "#d62728"}

plt.rcParams.update({
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
    # fixed ids/hashes keep SVG output byte-stable across runs
    "svg.hashsalt": "mejem",
    "svg.fonttype": "none",
})


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {"Date": None} if path.suffix in (".svg", ".pdf") else {}
    fig.savefig(path, metadata=metadata, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_histogram(ax, edges, counts: dict, density: bool = True):
    edges = np.asarray(edges)
    widths = np.diff(edges)
    for origin, c in counts.items():
        c = np.asarray(c, dtype=float)
        h = c / (c.sum() * widths) if density and c.sum() else c
        ax.stairs(h, edges, fill=True, alpha=0.45, color=COLORS.get(origin), label=origin.upper())
    ax.set_ylabel("density" if density else "count")
    ax.legend()
    return ax


def save_histogram_svg(edges, counts: dict, path, title: str = "", xlabel: str = "score") -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    plot_histogram(ax, edges, counts)
    ax.set_xlabel(xlabel)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def save_loss_curves(records: list[dict], path, smooth: int = 10) -> Path:
    keys = [k for k in ("total", "ce", "gen", "margin") if any(r.get(k) for r in records)]
    fig, axes = plt.subplots(len(keys), 1, figsize=(5, 1.6 * len(keys)), sharex=True, squeeze=False)
    steps = np.array([r["step"] for r in records])
    for ax, key in zip(axes[:, 0], keys):
        y = np.array([r.get(key, 0.0) for r in records], dtype=float)
        ax.plot(steps, y, lw=0.5, alpha=0.4, color="0.5")
        if smooth > 1 and len(y) >= smooth:
            kernel = np.ones(smooth) / smooth
            ax.plot(steps[smooth - 1:], np.convolve(y, kernel, mode="valid"), lw=1.2)
        ax.set_ylabel(key)
    axes[-1, 0].set_xlabel("step")
    return _save(fig, path)


def save_energy_curves(records: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 2.6))
    steps = [r["step"] for r in records]
    for key, label in (("mean_id_energy", "ID"), ("mean_ood_energy", "aux OOD"),
                       ("mean_neg_energy", "SGLD negatives")):
        if any(key in r for r in records):
            ax.plot(steps, [r.get(key, np.nan) for r in records], lw=0.8, label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("mean energy")
    ax.legend()
    return _save(fig, path)


def save_ablation_bars(summary: list[dict], path, ood_dataset: str = "ring") -> Path:
    rows = [r for r in summary if r["ood_dataset"] == ood_dataset]
    cells = list(dict.fromkeys(r["cell"] for r in rows))
    x = np.arange(len(cells))
    fig, ax = plt.subplots(figsize=(1.1 * len(cells) + 1.5, 3.0))
    for offset, kind in ((-0.2, "softmax"), (0.2, "energy")):
        vals = [next((float(r["auroc"]) for r in rows if r["cell"] == c and r["score_kind"] == kind), np.nan)
                for c in cells]
        ax.bar(x + offset, vals, width=0.4, label=kind)
    ax.set_xticks(x, cells, rotation=20, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("AUROC")
    ax.legend(loc="lower right")
    return _save(fig, path)
