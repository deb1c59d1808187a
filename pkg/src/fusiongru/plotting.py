"""Figures written next to the CLI's text outputs.

Everything renders with the Agg backend straight to files; nothing here
opens a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}

TRUTH_COLOR = "tab:blue"
PRED_COLOR = "tab:green"
PAST_COLOR = "goldenrod"


def figure(width=5.0, height=None, **kwargs):
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    with plt.rc_context(STYLE):
        return plt.subplots(figsize=(width, height or width * golden), **kwargs)


def _save(fig, path):
    with plt.rc_context(STYLE):
        fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_curve(history, path):
    """Train/validation loss per epoch on a log axis."""
    fig, ax = figure()
    epochs = [h["epoch"] for h in history]
    ax.plot(epochs, [h["train_loss"] for h in history], marker="o", ms=3, label="train")
    ax.plot(epochs, [h["val_loss"] for h in history], marker="s", ms=3, label="validation")
    if history and min(min(h["train_loss"], h["val_loss"]) for h in history) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("total loss")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_step_errors(curves, fps, path):
    """Mean centre displacement (px) against prediction time for each predictor."""
    fig, ax = figure()
    for name, errors in curves.items():
        t = np.arange(1, len(errors) + 1) / fps
        ax.plot(t, errors, marker="o", ms=3, label=name)
    ax.set_xlabel("prediction time (s)")
    ax.set_ylabel("displacement error (px)")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_overlays(panels, frame_size, path, cols=3):
    """Synthetic-scene overlays: past track, true and predicted future.

    ``panels`` is a list of dicts with pixel arrays ``past`` (T, 4),
    ``truth`` (N, 4), ``pred`` (N, 4) and an optional ``title``.
    """
    width, height = frame_size
    rows = max(1, int(np.ceil(len(panels) / cols)))
    fig, axes = figure(width=3.2 * cols, height=3.2 * rows * height / width + 0.4, nrows=rows, ncols=cols, squeeze=False)
    for ax in axes.ravel():
        ax.set_xlim(0, width)
        ax.set_ylim(height, 0)
        ax.set_xticks([])
        ax.set_yticks([])
        ax.set_facecolor("0.93")
    for ax, panel in zip(axes.ravel(), panels):
        past, truth, pred = (np.asarray(panel[k]) for k in ("past", "truth", "pred"))
        ax.plot(past[:, 0], past[:, 1], color=PAST_COLOR, lw=1.5)
        ax.plot(truth[:, 0], truth[:, 1], color=TRUTH_COLOR, lw=1.2)
        ax.plot(pred[:, 0], pred[:, 1], color=PRED_COLOR, lw=1.2, ls="--")
        for box, color in ((truth[-1], TRUTH_COLOR), (pred[-1], PRED_COLOR)):
            x, y, w, h = box
            ax.add_patch(Rectangle((x - w / 2, y - h / 2), max(w, 0.0), max(h, 0.0), fill=False, ec=color, lw=1.2))
        if panel.get("title"):
            ax.set_title(panel["title"], fontsize=8)
    return _save(fig, path)
