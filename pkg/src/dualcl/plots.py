"""SVG figure emission for experiment reports.

All figures are written as self-contained SVG files.  The SVG hash salt and
metadata are pinned so reruns produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["svg.hashsalt"] = "dualcl"
plt.rcParams["figure.figsize"] = (6.0, 4.5)

MODEL_COLORS = {"vcl": "#0072B2", "dcl": "#D55E00", "deep_dcl": "#009E73"}
CLASS_COLORS = ("#7f7f7f", "#bcbd22", "#17becf", "#e377c2")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _color(model: str) -> str:
    return MODEL_COLORS.get(model, "#333333")


def metric_curves(aggregates: dict[str, dict], metric: str, ylabel: str, path) -> Path:
    """Mean curve with a standard-error band per model."""
    fig, ax = plt.subplots()
    for model, agg in aggregates.items():
        epochs = agg["epoch"]
        mean = agg[f"{metric}_mean"]
        sem = agg[f"{metric}_sem"]
        ax.plot(epochs, mean, label=model, color=_color(model))
        ax.fill_between(epochs, mean - sem, mean + sem, alpha=0.25, color=_color(model))
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def topology_plot(X, labels, prototypes, occupancy, path, title: str = "") -> Path:
    """Data scatter, prototypes, and edges where occupancy is positive.

    Only the first two feature rows are drawn.
    """
    fig, ax = plt.subplots()
    labels = np.zeros(X.shape[1], dtype=int) if labels is None else labels
    for c in np.unique(labels):
        pts = X[:2, labels == c]
        ax.scatter(pts[0], pts[1], s=6, alpha=0.4, color=CLASS_COLORS[int(c) % 4])
    k = prototypes.shape[1]
    for a in range(k):
        for b in range(a + 1, k):
            if occupancy[a, b] > 0:
                ax.plot(
                    [prototypes[0, a], prototypes[0, b]],
                    [prototypes[1, a], prototypes[1, b]],
                    color="#444444",
                    linewidth=1.0,
                )
    ax.scatter(prototypes[0], prototypes[1], s=40, color="#d62728", zorder=3)
    ax.set_aspect("equal", adjustable="datalim")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def trajectory_plot(X, labels, snapshots, path, title: str = "") -> Path:
    """Prototype paths over training on top of a faint data scatter."""
    fig, ax = plt.subplots()
    labels = np.zeros(X.shape[1], dtype=int) if labels is None else labels
    for c in np.unique(labels):
        pts = X[:2, labels == c]
        ax.scatter(pts[0], pts[1], s=5, alpha=0.15, color=CLASS_COLORS[int(c) % 4])
    for j in range(snapshots.shape[2]):
        ax.plot(snapshots[:, 0, j], snapshots[:, 1, j], linewidth=0.8, color="#1f77b4")
    final = snapshots[-1]
    ax.scatter(final[0], final[1], s=40, color="#d62728", zorder=3)
    ax.set_aspect("equal", adjustable="datalim")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def accuracy_plot(rows, path) -> Path:
    """Accuracy vs feature count, one errorbar line per model.

    ``rows`` holds ``(model, n_features, mean, sem)`` tuples.
    """
    fig, ax = plt.subplots()
    models = sorted({r[0] for r in rows})
    for model in models:
        pts = sorted((r[1], r[2], r[3]) for r in rows if r[0] == model)
        nf = [p[0] for p in pts]
        mean = [p[1] for p in pts]
        sem = [p[2] for p in pts]
        ax.errorbar(nf, mean, yerr=sem, label=model, color=_color(model), capsize=3)
    ax.set_xlabel("number of features")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def rates_plot(modes, path) -> Path:
    """Fitted versus predicted decay rate per observable mode.

    ``modes`` holds dicts with ``mode``, ``predicted_rate``, ``fitted_rate``.
    """
    fig, ax = plt.subplots()
    idx = [m["mode"] for m in modes]
    ax.plot(idx, [m["predicted_rate"] for m in modes], "o-", label="predicted")
    fitted = [m["fitted_rate"] for m in modes]
    ax.plot(idx, fitted, "s--", label="fitted")
    ax.set_xlabel("mode")
    ax.set_ylabel("decay rate")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def residual_curves(epochs, residuals, path, ylabel: str = "subspace residual") -> Path:
    """Per-prototype residual curves on a log scale."""
    fig, ax = plt.subplots()
    floor = 1e-17
    for j in range(residuals.shape[1]):
        ax.semilogy(epochs, np.maximum(residuals[:, j], floor), linewidth=0.9)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    return _save(fig, path)
