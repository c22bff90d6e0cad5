"""
Figure rendering for loss curves and actual-vs-predicted traces.

Uses the object-oriented Agg API (no pyplot state) so figures can be drawn
from worker processes.  PNGs are written without a software/date stamp so
identical inputs give identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .training import LossCurve

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
}
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def new_figure(width: float = 6.0, height: float | None = None):
    import matplotlib as mpl

    with mpl.rc_context(STYLE):
        fig = Figure(figsize=(width, height or width * GOLDEN))
        FigureCanvasAgg(fig)
        ax = fig.add_subplot(1, 1, 1)
    return fig, ax


def save(fig: Figure, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.png")
    fig.tight_layout()
    fig.savefig(tmp, dpi=120, metadata={"Software": None})
    tmp.replace(path)
    return path


def plot_loss_curve(curve: LossCurve, metric: str, path, title: str = "") -> Path:
    """Train and test ``metric`` ('mse' or 'mae') against epoch."""
    fig, ax = new_figure()
    epochs = curve.column("epoch")
    ax.plot(epochs, curve.column(f"train_{metric}"), label="train")
    ax.plot(epochs, curve.column(f"test_{metric}"), label="test")
    ax.set_xlabel("Number of Epochs")
    ax.set_ylabel(f"{metric.upper()} Loss")
    if title:
        ax.set_title(title)
    ax.legend()
    return save(fig, path)


def plot_loss_curves(curve: LossCurve, prefix, title: str = "") -> list[Path]:
    prefix = Path(prefix)
    return [
        plot_loss_curve(curve, m, prefix.with_name(f"{prefix.name}_{m}.png"), f"{m.upper()} loss {title}".strip())
        for m in ("mae", "mse")
    ]


def plot_actual_vs_predicted(times, actual, predictions: Mapping[str, np.ndarray], path, title: str = "") -> Path:
    fig, ax = new_figure(width=8.0, height=3.5)
    x = np.asarray(times).astype("datetime64[m]").astype("datetime64[ms]").astype(object)
    ax.plot(x, actual, label="actual", color="black", linewidth=0.9)
    for name, pred in predictions.items():
        ax.plot(x, pred, label=name, linewidth=0.9, alpha=0.85)
    ax.set_xlabel("Time")
    ax.set_ylabel("Frequency (Hz)")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right")
    fig.autofmt_xdate()
    return save(fig, path)
