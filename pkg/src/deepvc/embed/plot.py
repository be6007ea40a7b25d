"""Scatter plots of 2-D embeddings coloured by cluster (and by class)."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


@dataclass
class PlotFiles:
    png: Path
    svg: Path
    legend_entries: list


def _scatter(ax, pts, labels, title, names=None):
    cmap = plt.get_cmap("tab10" if labels.max() < 10 else "tab20")
    entries = []
    for i, lab in enumerate(np.unique(labels)):
        sel = labels == lab
        name = names[int(lab)] if names is not None and 0 <= int(lab) < len(names) else str(lab)
        ax.scatter(pts[sel, 0], pts[sel, 1], s=6, color=cmap(i % cmap.N), label=name, linewidths=0)
        entries.append(name)
    ax.set_title(title)
    ax.set_axis_off()
    ax.legend(loc="best", fontsize=7, markerscale=2, frameon=False)
    return entries


def plot_clusters(embedding, labels, out, truth=None, class_names=None) -> PlotFiles:
    """Write ``out``.png and ``out``.svg; adds a truth-coloured panel when ``truth`` is given."""
    pts = np.asarray(getattr(embedding, "points", embedding), dtype=np.float64)
    lab = np.asarray(getattr(labels, "labels", labels))
    if lab.size == 0:
        raise ValueError("cannot plot an empty label set")
    if len(lab) != len(pts):
        raise ValueError("labels and embedding differ in length")
    if truth is not None and len(truth) != len(pts):
        raise ValueError("truth and embedding differ in length")
    out = Path(out)
    if out.suffix.lower() in (".png", ".svg"):
        out = out.with_suffix("")
    out.parent.mkdir(parents=True, exist_ok=True)

    ncols = 1 if truth is None else 2
    fig, axes = plt.subplots(1, ncols, figsize=(5 * ncols, 5), squeeze=False)
    entries = _scatter(axes[0, 0], pts, lab, "clusters")
    if truth is not None:
        _scatter(axes[0, 1], pts, np.asarray(truth), "ground truth", class_names)
    fig.tight_layout()
    png, svg = out.with_suffix(".png"), out.with_suffix(".svg")
    try:
        fig.savefig(png, dpi=120)
        fig.savefig(svg)
    finally:
        plt.close(fig)
    return PlotFiles(png, svg, entries)
