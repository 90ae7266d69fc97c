"""Figure rendering for pipeline reports.

Everything draws through the Agg backend and writes straight to files, so
reports work in headless runs. Figures land next to the CSV tables they
illustrate: reconstruction comparison grids, WER-versus-K curves, and
training loss/accuracy curves.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 150


def save_reconstruction_grid(path, originals, reconstructions, max_cols: int = 8):
    """Original frames on the top row, one row per labeled method below.

    `reconstructions` maps a label (say "dct k=5") to a list of images
    aligned with `originals`.
    """
    cols = min(max_cols, len(originals))
    rows = 1 + len(reconstructions)
    fig, axes = plt.subplots(rows, cols, figsize=(1.4 * cols, 1.5 * rows),
                             squeeze=False)
    row_images = [("original", originals)]
    row_images += sorted(reconstructions.items())
    for r, (label, images) in enumerate(row_images):
        for c in range(cols):
            ax = axes[r][c]
            ax.imshow(np.asarray(images[c]), cmap="gray", vmin=0.0, vmax=1.0,
                      interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if c == 0:
                ax.set_ylabel(label, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def save_wer_vs_k(path, results):
    """Line plot of WER against feature dimension K.

    `results` maps a system label to {K: wer_percent_float}.
    """
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label in sorted(results):
        cells = results[label]
        ks = sorted(cells)
        ax.plot(ks, [cells[k] for k in ks], marker="o", label=label)
    ax.set_xlabel("features per modality (K)")
    ax.set_ylabel("WER (%)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def save_loss_curve(path, losses, ylabel: str = "reconstruction loss"):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(range(len(losses)), losses, marker=".")
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def save_training_curves(path, curves):
    """Frame-accuracy curves from classifier training records
    (dicts with epoch, train_acc, val_acc)."""
    epochs = [c["epoch"] for c in curves]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, [c["train_acc"] for c in curves], marker=".", label="train")
    ax.plot(epochs, [c["val_acc"] for c in curves], marker=".", label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("frame accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path
