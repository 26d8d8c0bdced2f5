"""Figure rendering for the report path.  Figures go to PNG files only."""

from __future__ import annotations

from math import sqrt
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fitting import gaussian_model  # noqa: E402

inches_per_pt = 1.0 / 72.27
golden_mean = (sqrt(5.0) - 1.0) / 2.0
fig_width = 340.0 * inches_per_pt
fig_size = [fig_width, fig_width * golden_mean]

STYLE = {
    "axes.labelsize": 9,
    "font.size": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "font.family": "serif",
    "figure.figsize": fig_size,
    "figure.dpi": 150,
    "savefig.dpi": 150,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "axes.linewidth": 0.8,
    "lines.markersize": 4,
    "svg.hashsalt": "memqfc",
}


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_sweep(x, y, sigma, path, xlabel, ylabel, logx=True, y2=None, y2_sigma=None, y2label=None):
    """Sweep curve with error bars, optional second quantity on a right axis."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.errorbar(x, y, yerr=sigma, fmt="s", color="C3", capsize=2)
        if logx:
            ax.set_xscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel, color="C3")
        if y2 is not None:
            ax2 = ax.twinx()
            ax2.errorbar(x, y2, yerr=y2_sigma, fmt="o", mfc="none", color="C0", capsize=2)
            ax2.set_ylabel(y2label or "", color="C0")
        return _save(fig, path)


def plot_histogram(offsets, counts, path, title=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(offsets, counts, width=0.8, color="0.4")
        ax.set_xlabel("trial offset")
        ax.set_ylabel("coincidences")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_waveform(centers_s, counts, path, fit=None):
    """Conditional waveform in ns with the Gaussian fit if given."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        t_ns = np.asarray(centers_s) * 1e9
        ax.step(t_ns, counts, where="mid", color="k", lw=0.8)
        if fit is not None:
            tt = np.linspace(t_ns.min(), t_ns.max(), 400)
            p = fit.parameters
            yy = gaussian_model(tt * 1e-9, [p["amplitude"], p["center"], p["fwhm"], p["offset"]])
            ax.plot(tt, yy, "--", color="C3", label=f"FWHM {p['fwhm'] * 1e9:.1f} ns")
            ax.legend(frameon=False)
        ax.set_xlabel("time (ns)")
        ax.set_ylabel("counts per bin")
        return _save(fig, path)
