"""Rendering and schema handling against handwritten fixture CSVs."""

import numpy as np
import pytest

from cvheat_plots import (
    GridMismatch,
    MissingColumn,
    plot_closed_loop,
    plot_discretization,
    read_trajectory,
)

from conftest import write_trajectory_csv


class TestReader:
    def test_reads_groups_and_bounds(self, trajectory_csv):
        table = read_trajectory(trajectory_csv)
        assert table.pipe_theta.shape == (6, 2)
        assert table.soil_theta.shape == (6, 10)
        assert table.soil_min == 278.15
        assert table.flows.shape == (6, 1)

    def test_missing_column_is_named(self, tmp_path, trajectory_csv):
        text = trajectory_csv.read_text().splitlines()
        text[0] = text[0].replace("dtheta_K", "bogus")
        broken = tmp_path / "broken.csv"
        broken.write_text("\n".join(text))
        with pytest.raises(MissingColumn) as err:
            read_trajectory(broken)
        assert err.value.column == "dtheta_K"


class TestClosedLoop:
    def test_degenerate_single_row_renders(self, tmp_path):
        csv = write_trajectory_csv(tmp_path / "one.csv", n_steps=1)
        out = tmp_path / "one.svg"
        summary = plot_closed_loop(csv, out)
        assert out.exists() and out.stat().st_size > 0
        assert summary["min_temp_line_k"] == 278.15

    def test_min_temperature_line_in_soil_panel(self, trajectory_csv, tmp_path):
        out = tmp_path / "run.svg"
        plot_closed_loop(trajectory_csv, out)
        assert "min. temp." in out.read_text()

    def test_compare_overlay(self, tmp_path):
        a = write_trajectory_csv(tmp_path / "a.csv", seed=1)
        b = write_trajectory_csv(tmp_path / "b.csv", seed=2, wobble=0.3)
        out = tmp_path / "cmp.svg"
        summary = plot_closed_loop(a, out, compare_csv=b)
        assert summary["compared"]
        assert "compare" in out.read_text()

    def test_identical_inputs_identical_bytes(self, trajectory_csv, tmp_path):
        out1, out2 = tmp_path / "r1.svg", tmp_path / "r2.svg"
        plot_closed_loop(trajectory_csv, out1)
        plot_closed_loop(trajectory_csv, out2)
        assert out1.read_bytes() == out2.read_bytes()

    def test_png_output(self, trajectory_csv, tmp_path):
        out = tmp_path / "run.png"
        plot_closed_loop(trajectory_csv, out)
        assert out.read_bytes()[:4] == b"\x89PNG"


class TestDiscretization:
    def test_identical_inputs_zero_error(self, trajectory_csv, tmp_path):
        out = tmp_path / "dis.svg"
        summary = plot_discretization(trajectory_csv, trajectory_csv, out)
        assert summary["max_pipe_error_k"] == 0.0
        assert summary["max_soil_error_k"] == 0.0
        assert out.exists()

    def test_integer_refinement_downsampled(self, tmp_path):
        coarse = write_trajectory_csv(tmp_path / "c.csv", n_steps=4)
        fine = write_trajectory_csv(tmp_path / "f.csv", n_steps=12)
        # 12 rows is a 3x refinement of 4 rows, but the time grids then
        # disagree, which must be reported as a grid mismatch
        with pytest.raises(GridMismatch):
            plot_discretization(coarse, fine, tmp_path / "x.svg")

    def test_non_integer_ratio_rejected(self, tmp_path):
        a = write_trajectory_csv(tmp_path / "a.csv", n_steps=4)
        b = write_trajectory_csv(tmp_path / "b.csv", n_steps=6)
        with pytest.raises(GridMismatch):
            plot_discretization(a, b, tmp_path / "x.svg")


class TestCli:
    def test_entry_points(self, trajectory_csv, tmp_path):
        from cvheat_plots.closed_loop import main as main_cl
        from cvheat_plots.discretization import main as main_dis

        out = tmp_path / "cli.svg"
        assert main_cl(["--in", str(trajectory_csv), "--out", str(out)]) == 0
        assert out.exists()
        out2 = tmp_path / "cli2.svg"
        assert (
            main_dis(
                ["--in", str(trajectory_csv), "--reference", str(trajectory_csv), "--out", str(out2)]
            )
            == 0
        )
        assert out2.exists()
