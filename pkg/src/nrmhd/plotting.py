"""PNG figures rendered from the CSV files an experiment writes.

Figures are drawn on an explicit Agg canvas, so importing this module never
touches the global matplotlib backend.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .reports import read_csv

# PNG text chunks left out so reruns give identical bytes
_PNG_META = {"Software": None}


def _columns(csv_path) -> dict:
    header, rows = read_csv(csv_path)
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {h: data[:, i] for i, h in enumerate(header)}


def plot_csv(
    csv_path,
    x: str,
    ys: Sequence[str],
    png_path=None,
    logx: bool = False,
    logy: bool = False,
    title: str = "",
    style: str = "-",
) -> Path:
    """Plot columns ``ys`` of a CSV against column ``x``; returns the PNG path.

    The PNG goes next to the CSV (same stem) unless ``png_path`` is given.
    Nonpositive values are masked on logarithmic axes.
    """
    csv_path = Path(csv_path)
    cols = _columns(csv_path)
    missing = [c for c in (x, *ys) if c not in cols]
    if missing:
        raise KeyError(f"{csv_path.name} has no column(s) {missing}")
    png_path = Path(png_path) if png_path else csv_path.with_suffix(".png")

    fig = Figure(figsize=(6.4, 4.2), dpi=100)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot()
    xv = cols[x]
    for name in ys:
        yv = cols[name].copy()
        if logy:
            yv[yv <= 0] = np.nan
        ax.plot(xv, yv, style, label=name, lw=1.2, ms=3)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.grid(True, alpha=0.3)
    if len(ys) > 1:
        ax.legend(fontsize=8)
    elif ys:
        ax.set_ylabel(ys[0])
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(png_path, metadata=_PNG_META)
    return png_path


# which columns to draw for each CSV an experiment may produce
FIGURES = {
    "heat_ensemble.csv": dict(x="sample", ys=["ratio_sup", "ratio_int_Hs1", "ratio_weighted", "ratio_Lq"], style="o", title="heat smoothing: measured / bound"),
    "scan.csv": dict(x="t_min", ys=["I", "lower_bound"], logx=True, style="o-", title="truncated integral against log-sum bound"),
    "chain.csv": dict(x="j", ys=["full", "restricted", "damped_const", "interval_bound", "shell_bound"], logy=True, title="slice chain"),
    "maxreg_ensemble.csv": dict(x="sample", ys=["hom_ratio", "l2_ratio_over_bound"], style="o", title="maximal regularity ratios"),
    "stokes_ensemble.csv": dict(x="sample", ys=["C_eps", "C_r"], style="o", title="Stokes split constants"),
    "series.csv": dict(x="t", ys=["u_L2", "B_L2", "B_H[s]", "u_H[s+eps]"], logy=True, title="norm history"),
    "convergence.csv": dict(x="dt", ys=["error"], logx=True, logy=True, style="o-", title="temporal self-convergence"),
    "ode_sweep.csv": dict(x="row", ys=["max_rel_gap"], logy=True, style="o", title="comparison ODE: gap to closed-form bound"),
}


def render_directory(directory) -> list:
    """Draw every known CSV found in ``directory``; returns the PNG paths."""
    out = []
    for name, layout in FIGURES.items():
        path = Path(directory) / name
        if path.exists():
            out.append(plot_csv(path, png_path=None, **layout))
    return out

