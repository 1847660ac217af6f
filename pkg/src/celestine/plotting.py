"""Report figures written next to the CLI's JSON/CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def plot_architecture(rows: list[dict], path) -> Path:
    """Output elements and trainable parameters per numbered layer, log scale."""
    labels = [str(r["row"]) for r in rows]
    elements = [max(int(np.prod(r["shape"])), 1) for r in rows]
    params = [max(r["params"], 1) for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar(x - 0.2, elements, 0.4, label="output elements")
    ax.bar(x + 0.2, params, 0.4, label="trainable params")
    for r, xi in zip(rows, x):
        if r.get("status") == "erratum":
            ax.annotate("erratum", (xi, elements[int(xi)]), ha="center", va="bottom",
                        fontsize=7, color="firebrick")
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_xlabel("layer")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_confusion(cm, path, title: str = "") -> Path:
    grid = np.array([[cm.tp, cm.fn], [cm.fp, cm.tn]])
    fig, ax = plt.subplots(figsize=(3.6, 3.2))
    ax.imshow(grid, cmap="Blues")
    for (i, j), v in np.ndenumerate(grid):
        ax.text(j, i, str(v), ha="center", va="center",
                color="white" if v > grid.max() / 2 else "black")
    ax.set_xticks([0, 1])
    ax.set_xticklabels(["galaxy", "NSC"])
    ax.set_yticks([0, 1])
    ax.set_yticklabels(["galaxy", "NSC"])
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_training(epochs, path) -> Path:
    ep = [e.epoch for e in epochs]
    fig, ax1 = plt.subplots(figsize=(6, 3.5))
    ax1.plot(ep, [e.loss for e in epochs], color="tab:blue")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(ep, [e.train_acc for e in epochs], color="tab:orange")
    ax2.set_ylabel("train accuracy", color="tab:orange")
    ax2.set_ylim(0, 1.05)
    return _save(fig, path)


def plot_timing(report, path, reference: dict | None = None) -> Path:
    names = ["preprocessing", "classification", "total"]
    measured = [report.preprocessing_ms_per_sample, report.classification_ms_per_sample,
                report.total_ms_per_sample]
    x = np.arange(3)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(x - 0.2, measured, 0.4, label="measured")
    if reference:
        ref = [reference["preprocessing_ms"], reference["classification_ms"], reference["total_ms"]]
        ax.bar(x + 0.2, ref, 0.4, label="published (reference only)", hatch="//", alpha=0.6)
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylabel("ms / sample")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_image(pixels: np.ndarray, path, title: str = "") -> Path:
    img = np.asarray(pixels, dtype=np.float64)
    # Thumbnail large frames before drawing.
    step = max(1, max(img.shape) // 1024)
    img = img[::step, ::step]
    lo, hi = np.percentile(img, [1, 99.5])
    fig, ax = plt.subplots(figsize=(6, 3.4))
    ax.imshow(np.arcsinh((img - lo) / max(hi - lo, 1e-9) * 10), cmap="gray", origin="upper")
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    return _save(fig, path)
