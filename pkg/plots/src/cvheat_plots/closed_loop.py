"""Five-panel closed-loop figure from a trajectory CSV.

Panels, top to bottom: selected pipe-CV temperatures, selected soil-CV
temperatures with the minimum-temperature line, per-pipe mass flows,
heater lift, electricity price.  ``--compare`` overlays a second run in
grey dashed lines.
"""

from __future__ import annotations

import argparse

import matplotlib.pyplot as plt

from .reader import read_trajectory, spread_indices
from .style import BOUND_COLOR, COMPARE_COLOR, FIGWIDTH, PANEL_HEIGHT, SERIES_COLORS, apply_style, save


def plot_closed_loop(trajectory_csv, out_path, compare_csv=None) -> dict:
    """Render the figure; returns a small summary of what was drawn."""
    apply_style()
    table = read_trajectory(trajectory_csv)
    other = read_trajectory(compare_csv) if compare_csv else None
    fig, axes = plt.subplots(
        5, 1, sharex=True, figsize=(FIGWIDTH, 5 * PANEL_HEIGHT), constrained_layout=True
    )
    ax_pipe, ax_soil, ax_flow, ax_dth, ax_price = axes

    pipe_sel = spread_indices(table.pipe_theta.shape[1], 3)
    for j, idx in enumerate(pipe_sel):
        ax_pipe.plot(
            table.time_h,
            table.pipe_theta[:, idx],
            color=SERIES_COLORS[j % len(SERIES_COLORS)],
            label=table.pipe_labels[idx],
        )
    ax_pipe.set_ylabel("pipe temp. [K]")

    soil_sel = spread_indices(table.soil_theta.shape[1], 3)
    for j, idx in enumerate(soil_sel):
        ax_soil.plot(
            table.time_h,
            table.soil_theta[:, idx],
            color=SERIES_COLORS[j % len(SERIES_COLORS)],
            label=table.soil_labels[idx],
        )
    ax_soil.axhline(
        table.soil_min, color=BOUND_COLOR, linestyle="--", linewidth=1.4, label="min. temp."
    )
    ax_soil.set_ylabel("soil temp. [K]")

    for p in range(table.flows.shape[1]):
        ax_flow.plot(
            table.time_h,
            table.flows[:, p],
            color=SERIES_COLORS[p % len(SERIES_COLORS)],
            linestyle=("-", "--", "-.", ":")[p % 4],
            label=f"pipe {p + 1}",
        )
    ax_flow.set_ylabel("mass flow [kg/s]")

    ax_dth.plot(table.time_h, table.dtheta, color=SERIES_COLORS[1])
    ax_dth.set_ylabel("heater lift [K]")

    ax_price.step(table.time_h, table.price, where="post", color=SERIES_COLORS[0])
    ax_price.set_ylabel("price [EUR/kWh]")
    ax_price.set_xlabel("time [h]")

    if other is not None:
        for j, idx in enumerate(spread_indices(other.pipe_theta.shape[1], 3)):
            ax_pipe.plot(
                other.time_h, other.pipe_theta[:, idx], color=COMPARE_COLOR,
                linestyle="--", label="compare" if j == 0 else None,
            )
        for j, idx in enumerate(spread_indices(other.soil_theta.shape[1], 3)):
            ax_soil.plot(other.time_h, other.soil_theta[:, idx], color=COMPARE_COLOR, linestyle="--")
        for p in range(other.flows.shape[1]):
            ax_flow.plot(other.time_h, other.flows[:, p], color=COMPARE_COLOR, linestyle="--")
        ax_dth.plot(other.time_h, other.dtheta, color=COMPARE_COLOR, linestyle="--")

    for ax in (ax_pipe, ax_soil, ax_flow):
        ax.legend(loc="best", ncol=2)
    save(fig, out_path)
    return {
        "pipe_series": len(pipe_sel) + (len(spread_indices(other.pipe_theta.shape[1], 3)) if other else 0),
        "soil_series": len(soil_sel),
        "min_temp_line_k": table.soil_min,
        "compared": other is not None,
        "out": str(out_path),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot-closed-loop", description=__doc__.splitlines()[0]
    )
    parser.add_argument("--in", dest="trajectory", required=True, help="trajectory.csv")
    parser.add_argument("--out", required=True, help="output image (.svg or .png)")
    parser.add_argument("--compare", default=None, help="second trajectory.csv to overlay")
    args = parser.parse_args(argv)
    summary = plot_closed_loop(args.trajectory, args.out, args.compare)
    print(f"wrote {summary['out']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
