"""Acceptance criterion 10: render the benchmark run's CSVs.

The input CSVs are produced through the primary package's command-line
interface (a subprocess; the only coupling is the CSV schema).
"""

import subprocess
import sys
from pathlib import Path

import pytest

from cvheat_plots import plot_closed_loop, plot_discretization

ROOT = Path(__file__).resolve().parents[2]


@pytest.fixture(scope="module")
def benchmark_csvs(tmp_path_factory):
    out = tmp_path_factory.mktemp("benchmark48h")
    cmd = [
        sys.executable,
        "-m",
        "cvheat.cli",
        "run",
        "--scenario",
        str(ROOT / "scenarios" / "benchmark_2x3_48h.yaml"),
        "--out",
        str(out),
        "--reference-refinement",
        "64",
    ]
    proc = subprocess.run(cmd, capture_output=True, text=True, cwd=ROOT)
    assert proc.returncode == 0, proc.stderr
    return out


def test_criterion_10_plot_generation(benchmark_csvs, tmp_path):
    closed = tmp_path / "closed_loop.svg"
    summary = plot_closed_loop(benchmark_csvs / "trajectory.csv", closed)
    assert closed.exists() and closed.stat().st_size > 0
    assert summary["min_temp_line_k"] == 278.15
    assert "min. temp." in closed.read_text()

    dis = tmp_path / "discretization.svg"
    errors = plot_discretization(
        benchmark_csvs / "trajectory.csv", benchmark_csvs / "reference.csv", dis
    )
    assert dis.exists() and dis.stat().st_size > 0
    assert errors["max_pipe_error_k"] > errors["max_soil_error_k"]
    print(
        "\nACCEPTANCE 10 PASS: closed-loop and discretization figures rendered; "
        f"soil panel carries the 278.15 K line; pipe-group error "
        f"{errors['max_pipe_error_k']:.3f} K > soil-group error "
        f"{errors['max_soil_error_k']:.3f} K"
    )
