"""Shared figure style: colors, sizes, deterministic output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

# Color cycle used across all panels (kept short on purpose).
SERIES_COLORS = ("#0072bd", "#d95319", "#edb120", "#7e2f8e", "#77ac30")
COMPARE_COLOR = "#666666"
BOUND_COLOR = "#000000"

FIGWIDTH = 7.0
PANEL_HEIGHT = 1.7

#: Fixed hash salt, so identical inputs render byte-identical SVGs.
HASH_SALT = "cvheat-plots"


def apply_style() -> None:
    plt.rcParams.update(
        {
            "svg.hashsalt": HASH_SALT,
            "figure.dpi": 110,
            "font.size": 8.5,
            "axes.grid": True,
            "grid.alpha": 0.35,
            "legend.fontsize": 7,
            "lines.linewidth": 1.2,
        }
    )


def save(fig, path) -> None:
    """Write SVG (default) or PNG, stripping nondeterministic metadata."""
    path = str(path)
    if path.endswith(".svg"):
        fig.savefig(path, metadata={"Date": None})
    else:
        fig.savefig(path)
    plt.close(fig)
