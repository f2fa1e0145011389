"""Figures written next to the CSV/JSON artifacts.

PNG files carry no software/version metadata so repeated runs are byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["save_figure", "field_image", "line_plot"]

_METADATA = {"Software": None}


def save_figure(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=110, metadata=_METADATA)
    plt.close(fig)
    return path


def field_image(u, path, title: str = "", level_sets=(0.0,)) -> Path:
    """Colour map of a 2D field with optional contour lines."""
    grid = u.grid
    if grid.dim != 2:
        raise ValueError("field_image needs a 2D field")
    (x0, x1), (y0, y1) = grid.extents
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    im = ax.imshow(u.values.T, origin="lower", extent=(x0, x1, y0, y1), cmap="RdBu_r",
                   vmin=-1, vmax=1, interpolation="nearest")
    if level_sets:
        X, Y = grid.mesh()
        ax.contour(X, Y, u.values, levels=list(level_sets), colors="k", linewidths=0.8)
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return save_figure(fig, path)


def line_plot(series, path, xlabel: str, ylabel: str, title: str = "",
              logx: bool = False, logy: bool = False, hline=None) -> Path:
    """``series`` is a list of ``(label, x, y)``."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for label, x, y in series:
        ax.plot(np.asarray(x, float), np.asarray(y, float), marker="o", ms=3.5, label=label)
    if hline is not None:
        ax.axhline(hline, color="0.4", ls="--", lw=0.8)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return save_figure(fig, path)
