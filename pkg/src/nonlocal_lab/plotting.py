"""Static SVG plots (no scripts, reproducible bytes)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "nonlocal-lab", "svg.fonttype": "path", "font.size": 9}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def line_plot(path, x, series: dict, xlabel="", ylabel="", title="", logx=False, logy=False,
              markers=True):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name, y in series.items():
            ax.plot(x, y, marker="o" if markers else None, ms=3, lw=1.2, label=name)
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if len(series) > 1:
            ax.legend(frameon=False)
        ax.grid(alpha=0.3)
        return _save(fig, path)


def scatter_fit(path, x, y, slope, intercept, xlabel="", ylabel="", title=""):
    """Points and the fitted line y = intercept + slope x."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(x, y, "o", ms=4, label="members")
        xx = np.linspace(np.min(x), np.max(x), 50)
        ax.plot(xx, intercept + slope * xx, "-", lw=1, label=f"fit, slope {slope:.3f}")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(frameon=False)
        ax.grid(alpha=0.3)
        return _save(fig, path)


def heatmap(path, values, xticks, yticks, xlabel="", ylabel="", title="", cbar=""):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        im = ax.imshow(np.asarray(values, dtype=float), origin="lower", aspect="auto",
                       cmap="viridis")
        ax.set_xticks(range(len(xticks)), [f"{v:g}" for v in xticks])
        ax.set_yticks(range(len(yticks)), [f"{v:g}" for v in yticks])
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        fig.colorbar(im, ax=ax, label=cbar)
        return _save(fig, path)


def histogram(path, values, bins=20, xlabel="", title=""):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.hist(np.asarray(values, dtype=float), bins=bins, color="0.4")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("count")
        ax.set_title(title)
        return _save(fig, path)
