"""
Report figures.

Figures are drawn on bare :class:`matplotlib.figure.Figure` objects with the
Agg canvas, so nothing touches pyplot's global state and rendering is safe
from worker threads.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .grid import Grid2D
from .metrics import PairedSample, ValidationReport

TAG_COLORS = {"DAY": "tab:red", "NIGHT": "tab:blue"}

def _new_figure(width=6.0, height=4.0, ncols=1, nrows=1):
    fig = Figure(figsize=(width, height), dpi=100)
    FigureCanvasAgg(fig)
    axes = fig.subplots(nrows=nrows, ncols=ncols, squeeze=False)
    return fig, axes


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    return path


def plot_difference_histogram(report: ValidationReport, path, title: str = "",
                              xlabel: str = "difference [K]") -> Optional[Path]:
    """Bar histogram of a report's differences with MD/RMSE/RSD in the corner."""
    if report.is_empty:
        return None
    fig, axes = _new_figure()
    ax = axes[0, 0]
    edges = report.bin_edges
    ax.bar(edges[:-1], report.counts, width=np.diff(edges), align="edge",
           color="0.6", edgecolor="0.3", linewidth=0.5)
    ax.axvline(0.0, color="k", lw=0.8)
    ax.axvline(report.md, color="tab:orange", lw=1.0, ls="--", label="median")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(title)
    ax.text(0.98, 0.95,
            f"n = {report.n}\nMD = {report.md:.2f} K\nRMSE = {report.rmse:.2f} K\n"
            f"RSD = {report.rsd:.2f} K",
            transform=ax.transAxes, ha="right", va="top", fontsize=8)
    ax.legend(loc="upper left", frameon=False, fontsize=8)
    return _save(fig, path)


def plot_station_scatter(sample: PairedSample, reports: Mapping[str, ValidationReport],
                         path, title: str = "") -> Optional[Path]:
    """Product vs in-situ temperature, colored by DAY/NIGHT tag."""
    if len(sample) == 0:
        return None
    fig, axes = _new_figure(4.5, 4.5)
    ax = axes[0, 0]
    tags = sample.tags or ("ALL",) * len(sample)
    lines = []
    for tag in sorted(set(tags)):
        keep = np.array([t == tag for t in tags])
        ax.scatter(sample.reference[keep], sample.estimate[keep], s=8,
                   color=TAG_COLORS.get(tag, "0.3"), label=tag, alpha=0.8)
        rep = reports.get(tag)
        if rep is not None and not rep.is_empty:
            lines.append(f"{tag}: MD {rep.md:.2f}  RMSE {rep.rmse:.2f}  RSD {rep.rsd:.2f}")
    lo = float(min(sample.reference.min(), sample.estimate.min())) - 2
    hi = float(max(sample.reference.max(), sample.estimate.max())) + 2
    ax.plot([lo, hi], [lo, hi], color="k", lw=0.8)
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_aspect("equal")
    ax.set_xlabel("in situ LST [K]")
    ax.set_ylabel("product LST [K]")
    ax.set_title(title)
    ax.legend(loc="lower right", frameon=False, fontsize=8)
    if lines:
        ax.text(0.02, 0.98, "\n".join(lines), transform=ax.transAxes, va="top", fontsize=7)
    return _save(fig, path)


def plot_scene_panels(panels: Mapping[str, Grid2D], path, cmap: str = "inferno",
                      diff_to: Optional[str] = None) -> Path:
    """
    Side-by-side maps sharing one color scale (e.g. truth, source, bicubic,
    solver).  With ``diff_to``, a second row shows each panel minus that one.
    """
    names = list(panels)
    valid_vals = [g.values[g.valid] for g in panels.values() if g.valid.any()]
    allv = np.concatenate(valid_vals) if valid_vals else np.zeros(1)
    vmin, vmax = np.percentile(allv, [1, 99])
    nrows = 2 if diff_to else 1
    fig, axes = _new_figure(3.0 * len(names), 3.0 * nrows, ncols=len(names), nrows=nrows)
    for j, name in enumerate(names):
        g = panels[name]
        im = axes[0, j].imshow(g.filled(), cmap=cmap, vmin=vmin, vmax=vmax,
                               interpolation="nearest")
        axes[0, j].set_title(name)
        axes[0, j].set_xticks([])
        axes[0, j].set_yticks([])
    fig.colorbar(im, ax=list(axes[0]), shrink=0.8, label="K")
    if diff_to:
        ref = panels[diff_to]
        dm = None
        for j, name in enumerate(names):
            g = panels[name]
            ax = axes[1, j]
            ax.set_xticks([])
            ax.set_yticks([])
            if g.shape != ref.shape or name == diff_to:
                ax.set_visible(False)
                continue
            d = np.where(g.valid & ref.valid, g.values - ref.values, np.nan)
            dm = ax.imshow(d, cmap="RdBu_r", vmin=-3, vmax=3, interpolation="nearest")
            ax.set_title(f"{name} - {diff_to}")
        if dm is not None:
            fig.colorbar(dm, ax=list(axes[1]), shrink=0.8, label="K")
    path = Path(path)
    fig.savefig(path, metadata={"Software": None})
    return path
