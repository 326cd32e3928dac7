"""Matplotlib figure rendering for the CLI report outputs.

Grid overlays reproduce the patch boundaries per level on top of the image;
the training report adds a loss-curve figure next to the metrics CSV. All
figures are rendered with the Agg backend at a fixed dpi so repeated runs
produce identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Rectangle

from .grids import Quadtree, split_edges

_DPI = 100
_PNG_METADATA = {"Software": None}  # keep PNG bytes free of version strings


def _image_figure(pixels: np.ndarray):
    _, h, w = pixels.shape
    fig = plt.figure(figsize=(w / _DPI, h / _DPI), dpi=_DPI)
    ax = fig.add_axes([0, 0, 1, 1])
    ax.imshow(pixels.transpose(1, 2, 0), interpolation="nearest")
    ax.set_axis_off()
    ax.set_xlim(-0.5, w - 0.5)
    ax.set_ylim(h - 0.5, -0.5)
    return fig, ax


def _save(fig, path):
    fig.savefig(path, dpi=_DPI, metadata=_PNG_METADATA)
    plt.close(fig)


def _draw_cells(ax, rects, color="red"):
    for y0, x0, y1, x1 in rects:
        ax.add_patch(
            Rectangle((x0 - 0.5, y0 - 0.5), x1 - x0, y1 - y0, fill=False, edgecolor=color, linewidth=1.0)
        )


def save_static_overlays(pixels: np.ndarray, k: int, out_dir) -> list[Path]:
    """One overlay PNG per level, grid lines drawn on the (square) image."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    s = pixels.shape[1]
    paths = []
    for level in range(1, k + 1):
        edges = split_edges(0, s, level - 1)
        rects = [
            (edges[r], edges[c], edges[r + 1], edges[c + 1])
            for r in range(len(edges) - 1)
            for c in range(len(edges) - 1)
        ]
        fig, ax = _image_figure(pixels)
        _draw_cells(ax, rects)
        path = out_dir / f"level_{level}.png"
        _save(fig, path)
        paths.append(path)
    return paths


def save_dynamic_overlays(pixels: np.ndarray, tree: Quadtree, k: int, out_dir) -> list[Path]:
    """One overlay PNG per populated level of the quadtree."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for level in range(1, k + 1):
        rects = [(n.y0, n.x0, n.y1, n.x1) for n in tree.nodes if n.level == level]
        if not rects:
            break
        fig, ax = _image_figure(pixels)
        _draw_cells(ax, rects)
        path = out_dir / f"level_{level}.png"
        _save(fig, path)
        paths.append(path)
    return paths


def save_loss_curves(rows, out_path):
    """Loss-vs-step figure rendered next to the metrics CSV."""
    steps = [r.step for r in rows]
    fig = plt.figure(figsize=(6.4, 4.0), dpi=_DPI)
    ax = fig.add_subplot(111)
    ax.plot(steps, [r.total_loss for r in rows], label="total")
    ax.plot(steps, [r.recon_loss for r in rows], label="reconstruction")
    ax.plot(steps, [r.div_loss for r in rows], label="gate divergence")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    _save(fig, out_path)
