"""PNG figures for sweep results, confusion matrices and constellation images.

Uses the object-oriented Figure API so nothing touches global pyplot state.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

from .features import ConstellationImage

MARKERS = ("o", "s", "^", "D", "v", "x")


def plot_accuracy_vs_snr(sweeps, path, title: str = "") -> Path:
    fig = Figure(figsize=(5.5, 4.0), dpi=120)
    ax = fig.add_subplot()
    for k, res in enumerate(sweeps):
        ax.plot(res.snrs, res.accuracies, marker=MARKERS[k % len(MARKERS)], label=res.mode)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    return Path(path)


def plot_confusion(confusion: np.ndarray, labels, path, title: str = "") -> Path:
    cm = np.asarray(confusion, dtype=float)
    rows = cm.sum(axis=1, keepdims=True)
    frac = np.divide(cm, rows, out=np.zeros_like(cm), where=rows > 0)
    fig = Figure(figsize=(4.2, 3.8), dpi=120)
    ax = fig.add_subplot()
    im = ax.imshow(frac, vmin=0, vmax=1, cmap="Blues")
    ax.set_xticks(range(len(labels)), labels)
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i, j in np.ndindex(cm.shape):
        ax.text(j, i, f"{int(cm[i, j])}", ha="center", va="center",
                color="white" if frac[i, j] > 0.5 else "black", fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    return Path(path)


def plot_confusion_grid(sweep, labels, path) -> Path:
    """One small confusion panel per SNR of a sweep."""
    n = len(sweep.snrs)
    cols = min(n, 5)
    nrows = math.ceil(n / cols)
    fig = Figure(figsize=(2.3 * cols, 2.3 * nrows), dpi=110)
    for k, (snr, res) in enumerate(zip(sweep.snrs, sweep.results)):
        ax = fig.add_subplot(nrows, cols, k + 1)
        cm = res.confusion.astype(float)
        rows = cm.sum(axis=1, keepdims=True)
        ax.imshow(np.divide(cm, rows, out=np.zeros_like(cm), where=rows > 0), vmin=0, vmax=1, cmap="Blues")
        ax.set_title(f"{snr:g} dB", fontsize=9)
        ax.set_xticks(range(len(labels)), labels, fontsize=6, rotation=90)
        ax.set_yticks(range(len(labels)), labels, fontsize=6)
    fig.suptitle(sweep.mode)
    fig.tight_layout()
    fig.savefig(path)
    return Path(path)


def plot_image(image: ConstellationImage, path, title: str = "") -> Path:
    spec = image.spec
    fig = Figure(figsize=(4.5, 4.0), dpi=120)
    ax = fig.add_subplot()
    # rows of the grid run along the first axis (r or I), columns along the second
    ax.imshow(image.grid.T, origin="lower", aspect="auto", cmap="viridis",
              extent=(spec.lo1, spec.hi1, spec.lo2, spec.hi2))
    ax.set_xlabel("r" if spec.wrap2 else "I")
    ax.set_ylabel("theta (rad)" if spec.wrap2 else "Q")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    return Path(path)
