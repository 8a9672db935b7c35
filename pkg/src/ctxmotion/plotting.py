"""Figure output for the report commands (PNG files next to the CSVs)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import DISPLAY_NAMES  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "font.size": 9,
    "axes.grid": True,
    "grid.linestyle": "--",
    "grid.alpha": 0.5,
    "legend.fontsize": 8,
    "savefig.dpi": 150,
}


def plot_horizon_table(table, path: str | Path) -> Path:
    """Error-vs-time curves, one line per model row that has values."""
    path = Path(path)
    t = np.array(table.horizons) / 10.0
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for key in table.row_order:
            v = table.values(key)
            if np.isfinite(v).any():
                ax.plot(t, v, marker="o", ms=3, label=DISPLAY_NAMES[key])
        ax.set_xlabel("Time (s)")
        ax.set_ylabel("Mean Euclidean error (mm)")
        ax.set_title(table.title)
        ax.set_ylim(bottom=0)
        ax.legend(loc="upper left")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_interaction_curves(curves: dict, path: str | Path, title: str = "Average interactions",
                            step_s: float = 0.1, max_curves: int = 12) -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ranked = sorted(curves.items(), key=lambda kv: -np.nanmean(kv[1]))[:max_curves]
        for (src, dst), c in ranked:
            ax.plot((np.arange(len(c)) + 1) * step_s, 100.0 * c, lw=1.5, label=f"{src} to {dst}")
        ax.set_xlabel("Time (s)")
        ax.set_ylabel("Interaction %")
        ax.set_ylim(0, 100)
        ax.set_title(title)
        if ranked:
            ax.legend(loc="upper right", ncol=2)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
