"""Figure rendering for the CLI report path.

All functions write PNG files next to the delimited outputs; none of them
open interactive windows.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_domains", "plot_icl_curve", "plot_agreement"]


def plot_domains(coords: np.ndarray, labels, path, title: str = "Spatial domains"):
    """Scatter of spots colored by cluster label."""
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(6, 5.5))
    uniq = np.unique(labels)
    cmap = plt.get_cmap("tab20" if len(uniq) > 10 else "tab10")
    for k, lab in enumerate(uniq):
        mask = labels == lab
        ax.scatter(coords[mask, 0], coords[mask, 1], s=14,
                   color=cmap(k % cmap.N), label=str(lab))
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title)
    if len(uniq) <= 12:
        ax.legend(title="domain", fontsize=8, markerscale=1.2, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_icl_curve(ds: list[float], icls: list[float], best_d: float, path):
    """ICL versus the smoothness parameter, argmin highlighted."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ds, icls, "o-", color="tab:blue")
    ax.axvline(best_d, color="tab:red", linestyle="--",
               label=f"selected d = {best_d:g}")
    ax.set_xlabel("spatial smoothness d")
    ax.set_ylabel("ICL")
    ax.set_title("Smoothness selection")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_agreement(matrix: np.ndarray, path):
    """Heatmap of pairwise chain-agreement ARIs."""
    k = matrix.shape[0]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(matrix, vmin=0, vmax=1, cmap="viridis")
    for a in range(k):
        for b in range(k):
            ax.text(b, a, f"{matrix[a, b]:.3f}", ha="center", va="center",
                    color="white", fontsize=8)
    ax.set_xticks(range(k), [f"chain {i + 1}" for i in range(k)])
    ax.set_yticks(range(k), [f"chain {i + 1}" for i in range(k)])
    ax.set_title("Chain agreement (ARI)")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
