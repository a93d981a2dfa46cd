"""Matplotlib figures for generated sequences and variant comparisons.

All functions render off-screen (Agg) straight to a file and return its path.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _show(ax, grid: np.ndarray) -> None:
    g = np.asarray(grid, dtype=np.float64)
    g = (np.clip(g, -1.0, 1.0) + 1.0) / 2.0
    if g.ndim == 3 and g.shape[-1] == 1:
        ax.imshow(g[..., 0], cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
    else:
        ax.imshow(g, interpolation="nearest")
    ax.set_xticks([])
    ax.set_yticks([])


def contact_sheet(frames: Sequence[np.ndarray], labels: Sequence[str], path: str | Path,
                  title: str | None = None, cols: int = 8) -> Path:
    """Grid of frames with one label under each."""
    path = Path(path)
    n = max(len(frames), 1)
    cols = min(cols, n)
    rows = math.ceil(n / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(1.4 * cols, 1.6 * rows), squeeze=False)
    for k, ax in enumerate(axes.flat):
        if k < len(frames):
            _show(ax, frames[k])
            ax.set_xlabel(labels[k], fontsize=7)
        else:
            ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def slice_figure(slice_grid: np.ndarray, path: str | Path, scanline: int) -> Path:
    """A space-time slice, frame index running down the rows."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4, 0.25 * slice_grid.shape[0] + 1.0))
    _show(ax, slice_grid)
    ax.set_ylabel("frame")
    ax.set_xlabel("x")
    ax.set_title(f"scanline {scanline}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def compare_figure(table: dict, path: str | Path) -> Path:
    """Bar charts of mean adjacent SSIM and mode agreement per variant."""
    path = Path(path)
    names = [r["variant"] for r in table["rows"]]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    for ax, key, label in zip(axes, ("mean_ssim", "agreement"), ("adjacent SSIM", "mode agreement")):
        means = [r[key]["mean"] if r[key]["mean"] is not None else 0.0 for r in table["rows"]]
        errs = [r[key]["stderr"] or 0.0 for r in table["rows"]]
        ax.bar(range(len(names)), means, yerr=errs, color="0.55", capsize=3)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=7)
        ax.set_title(label, fontsize=9)
        ax.set_ylim(0.0, 1.05)
    fig.suptitle(f"{table['n_seeds']} seed(s)", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
