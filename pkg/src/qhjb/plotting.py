"""File-only figures for run reports (Agg backend, PNG output)."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="png")
    plt.close(fig)
    return path


def field_profiles(path, x: np.ndarray, curves: dict, title: str = "", mask: Optional[np.ndarray] = None,
                   ylabel: str = "value") -> Path:
    """Overlay several 1D fields; off-mask sites are blanked."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, y in curves.items():
            y = np.asarray(y, dtype=float)
            if mask is not None:
                y = np.where(mask, y, np.nan)
            ax.plot(x, y, label=label)
        ax.set_xlabel("x")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def field_map(path, grid, values: np.ndarray, title: str = "", mask: Optional[np.ndarray] = None) -> Path:
    """Colour map of a 2D field (first axis horizontal)."""
    vals = np.asarray(values, dtype=float)
    if mask is not None:
        vals = np.where(mask, vals, np.nan)
    extent = [grid.origin[0], grid.origin[0] + grid.extent[0], grid.origin[1], grid.origin[1] + grid.extent[1]]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        im = ax.imshow(vals.T, origin="lower", extent=extent, aspect="auto", cmap="viridis")
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        ax.set_title(title)
        return _save(fig, path)


def refinement(path, spacings: Sequence[float], series: dict, title: str = "", reference_order: float = 2.0) -> Path:
    """Log-log error against spacing with a reference slope."""
    h = np.asarray(spacings, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, err in series.items():
            ax.loglog(h, err, "o-", label=label)
        first = next(iter(series.values()))
        ref = first[0] * (h / h[0]) ** reference_order
        ax.loglog(h, ref, "k--", alpha=0.5, label=f"order {reference_order:g}")
        ax.set_xlabel("spacing")
        ax.set_ylabel("masked max")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def histogram_vs_density(path, edges: np.ndarray, empirical: np.ndarray, expected: np.ndarray,
                         title: str = "") -> Path:
    centres = 0.5 * (edges[1:] + edges[:-1])
    width = np.diff(edges)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(centres, empirical / width, width=width, alpha=0.5, label="particles")
        ax.plot(centres, expected / width, "k-", label="|psi|^2 cell mass")
        ax.set_xlabel("x")
        ax.set_ylabel("density")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def time_series(path, t: Sequence[float], series: dict, title: str = "", bound: Optional[float] = None,
                ylabel: str = "value", log: bool = False) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, y in series.items():
            ax.plot(t, y, "o-", label=label)
        if bound is not None:
            ax.axhline(bound, color="r", ls="--", label="bound")
        if log:
            ax.set_yscale("log")
        ax.set_xlabel("t")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def bars(path, labels: Sequence[str], values: Sequence[float], title: str = "", log: bool = True) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(range(len(values)), np.abs(values))
        ax.set_xticks(range(len(values)))
        ax.set_xticklabels(labels, rotation=30, ha="right")
        if log:
            ax.set_yscale("log")
        ax.set_title(title)
        return _save(fig, path)
