"""Discretization-error overlay: a run against its refined reference.

Dashed lines are the reference, dots the coarse run; one panel per CV
group (pipe, soil) with the group's maximum absolute error annotated.
Time grids must agree after integer downsampling of the longer table.
"""

from __future__ import annotations

import argparse

import matplotlib.pyplot as plt
import numpy as np

from .reader import GridMismatch, TrajectoryTable, read_trajectory, spread_indices
from .style import COMPARE_COLOR, FIGWIDTH, PANEL_HEIGHT, SERIES_COLORS, apply_style, save


def _align(a: TrajectoryTable, b: TrajectoryTable):
    """Downsample the finer table onto the coarser grid."""
    if len(a) == len(b):
        pass
    elif len(b) % len(a) == 0:
        r = len(b) // len(a)
        b = TrajectoryTable(
            path=b.path,
            time_h=b.time_h[r - 1 :: r],
            pipe_labels=b.pipe_labels,
            pipe_theta=b.pipe_theta[r - 1 :: r],
            soil_labels=b.soil_labels,
            soil_theta=b.soil_theta[r - 1 :: r],
            flows=b.flows[r - 1 :: r],
            dtheta=b.dtheta[r - 1 :: r],
            price=b.price[r - 1 :: r],
            soil_min=b.soil_min,
            soil_max=b.soil_max,
        )
    else:
        raise GridMismatch(
            f"{len(a)} vs {len(b)} rows: not an integer refinement"
        )
    if not np.allclose(a.time_h, b.time_h, rtol=0, atol=1e-9):
        raise GridMismatch("time grids differ after downsampling")
    if a.pipe_theta.shape[1] != b.pipe_theta.shape[1] or a.soil_theta.shape[1] != b.soil_theta.shape[1]:
        raise GridMismatch("CV column sets differ between the two tables")
    return a, b


def plot_discretization(coarse_csv, reference_csv, out_path) -> dict:
    apply_style()
    coarse, ref = _align(read_trajectory(coarse_csv), read_trajectory(reference_csv))
    errors = {
        "pipe": float(np.abs(coarse.pipe_theta - ref.pipe_theta).max()),
        "soil": float(np.abs(coarse.soil_theta - ref.soil_theta).max()),
    }
    fig, (ax_pipe, ax_soil) = plt.subplots(
        2, 1, sharex=True, figsize=(FIGWIDTH, 2 * 1.6 * PANEL_HEIGHT), constrained_layout=True
    )
    for ax, kind, labels, run, reference in (
        (ax_pipe, "pipe", coarse.pipe_labels, coarse.pipe_theta, ref.pipe_theta),
        (ax_soil, "soil", coarse.soil_labels, coarse.soil_theta, ref.soil_theta),
    ):
        sel = spread_indices(run.shape[1], 3)
        for j, idx in enumerate(sel):
            color = SERIES_COLORS[j % len(SERIES_COLORS)]
            ax.plot(ref.time_h, reference[:, idx], color=color, linestyle="--", linewidth=1.0)
            ax.plot(
                coarse.time_h, run[:, idx], color=color, linestyle="none",
                marker=".", markersize=4, label=labels[idx],
            )
        ax.set_ylabel(f"{kind} temp. [K]")
        ax.legend(loc="best", ncol=3)
        ax.text(
            0.02, 0.04,
            f"max {kind}-CV error: {errors[kind]:.3f} K",
            transform=ax.transAxes, fontsize=8,
            bbox={"facecolor": "white", "alpha": 0.8, "edgecolor": COMPARE_COLOR},
        )
    ax_soil.set_xlabel("time [h]")
    save(fig, out_path)
    return {
        "max_pipe_error_k": errors["pipe"],
        "max_soil_error_k": errors["soil"],
        "out": str(out_path),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot-discretization", description=__doc__.splitlines()[0]
    )
    parser.add_argument("--in", dest="coarse", required=True, help="trajectory.csv of the run")
    parser.add_argument("--reference", required=True, help="reference.csv (refined re-simulation)")
    parser.add_argument("--out", required=True, help="output image (.svg or .png)")
    args = parser.parse_args(argv)
    summary = plot_discretization(args.coarse, args.reference, args.out)
    print(
        f"wrote {summary['out']} (max pipe error {summary['max_pipe_error_k']:.3f} K, "
        f"max soil error {summary['max_soil_error_k']:.3f} K)"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
