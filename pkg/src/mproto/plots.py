"""Matplotlib renderings of the diagnostic tables (written next to the CSVs)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
})

MARKERS = "os^Dv<>ph*"


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def feature_scatter(path, coords, labels, proto_coords, proto_classes, class_names):
    """2-D projection of token features (dots) and prototypes (stars)."""
    fig, ax = plt.subplots(figsize=(6, 5))
    colors = plt.get_cmap("tab10")
    for c, name in enumerate(class_names):
        pts = coords[labels == c]
        if len(pts):
            ax.scatter(pts[:, 0], pts[:, 1], s=6, alpha=0.4, color=colors(c % 10), label=name)
        pp = proto_coords[proto_classes == c]
        if len(pp):
            ax.scatter(pp[:, 0], pp[:, 1], s=160, marker="*", edgecolor="k", color=colors(c % 10))
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.legend(markerscale=3, frameon=False)
    return _save(fig, path)


def transport_heatmap(path, counts, class_names):
    fig, ax = plt.subplots(figsize=(1.2 * len(class_names) + 2, 1.0 * len(class_names) + 1.5))
    im = ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(len(class_names)), class_names)
    ax.set_yticks(range(len(class_names)), class_names)
    ax.set_xlabel("class of assigned prototype")
    ax.set_ylabel("actual class")
    hi = counts.max() if counts.size else 0
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                    color="white" if hi and counts[i, j] > hi / 2 else "black")
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)


def similarity_bars(path, sims):
    fig, ax = plt.subplots(figsize=(4, 3))
    names = list(sims)
    ax.bar(names, [sims[n] for n in names], color="0.4")
    ax.set_ylabel("mean best-prototype similarity")
    ax.set_ylim(min(0.0, min(sims.values(), default=0.0)), 1.0)
    return _save(fig, path)


def similarity_curves(path, epochs, per_class):
    """``per_class``: class name -> list of values aligned with ``epochs``."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k, (name, vals) in enumerate(per_class.items()):
        ax.plot(epochs, vals, marker=MARKERS[k % len(MARKERS)], label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("token-prototype similarity")
    ax.legend(frameon=False)
    return _save(fig, path)


def sweep_plot(path, param, values, series):
    """``series``: metric name -> list of values aligned with ``values``."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = np.arange(len(values))
    for k, (name, ys) in enumerate(series.items()):
        ax.plot(x, ys, marker=MARKERS[k % len(MARKERS)], label=name)
    ax.set_xticks(x, [str(v) for v in values])
    ax.set_xlabel(param)
    ax.set_ylabel("score")
    ax.legend(frameon=False)
    return _save(fig, path)
