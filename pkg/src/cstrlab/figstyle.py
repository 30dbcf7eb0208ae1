"""Shared plotting defaults for report figures (file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

COLOR_THIS_RUN = "#2a6fbb"
COLOR_REFERENCE = "#b9b9b9"


def new_figure(n_rows: int):
    """Axes sized for a grouped bar chart with ``n_rows`` categories."""
    width = max(4.0, 1.1 * n_rows + 1.5)
    fig, ax = plt.subplots(figsize=(width, 3.2), dpi=120)
    ax.set_ylabel("word accuracy [%]")
    ax.set_ylim(0, 100)
    ax.grid(axis="y", alpha=0.3, linewidth=0.5)
    ax.set_axisbelow(True)
    return fig, ax


def save_figure(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
