"""Figures written next to the CSV output. Uses the non-interactive Agg backend."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_trajectory(times, w, node_ids, path: str | Path, observed=None,
                    title: str | None = None) -> None:
    """Potentials over time; ``observed`` adds markers for data points."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, nid in enumerate(node_ids):
        line, = ax.plot(times, w[:, i], label=f"w_{nid}")
        if observed is not None:
            ax.plot(times, observed[:, i], ".", ms=3, color=line.get_color(), alpha=0.5)
    ax.set_xlabel("t")
    ax.set_ylabel("potential")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss(history, path: str | Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(np.arange(1, len(history) + 1), history)
    ax.set_xlabel("iteration")
    ax.set_ylabel("batch loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
