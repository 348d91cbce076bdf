import numpy as np
import pytest


def fmt(v):
    return format(float(v), ".12g")


def write_trajectory_csv(path, n_steps=6, n_pipes=1, wobble=0.0, seed=0):
    """Handwritten file following the documented trajectory schema."""
    rng = np.random.default_rng(seed)
    pipe_cvs = [4, 5] if n_pipes == 1 else [4, 5, 6, 10, 11, 12]
    soil_cvs = [i for i in range(1, 13 if n_pipes == 1 else 31) if i not in pipe_cvs]
    header = (
        ["step", "time_s"]
        + [f"theta_cv{i:02d}_pipe_K" for i in pipe_cvs]
        + [f"theta_cv{i:02d}_soil_K" for i in soil_cvs]
        + [f"mdot_in_{p}_kgps" for p in range(1, n_pipes + 1)]
        + ["dtheta_K", "theta_in_K", "theta_out_K"]
        + [f"dp_{p}_Pa" for p in range(1, n_pipes + 1)]
        + [
            "cost_h_eur",
            "cost_t_eur",
            "price_eur_per_kwh",
            "theta_soil_K",
            "theta_air_K",
            "theta_soil_min_K",
            "theta_soil_max_K",
        ]
    )
    lines = [",".join(header)]
    for k in range(n_steps):
        t = 7200.0 * (k + 1)
        pipe = [300.0 + 2 * np.sin(k / 2 + i) + wobble * rng.normal() for i in range(len(pipe_cvs))]
        soil = [285.0 - 0.05 * k + 0.1 * i for i in range(len(soil_cvs))]
        flows = [2.0 + 0.1 * k] * n_pipes
        row = (
            [k, t]
            + pipe
            + soil
            + flows
            + [0.5, 301.0, 300.5]
            + [888.9 * f**2 for f in flows]
            + [0.01, 0.02, 0.25, 281.0, 276.0, 278.15, 313.15]
        )
        lines.append(",".join(str(v) if isinstance(v, int) else fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def trajectory_csv(tmp_path):
    return write_trajectory_csv(tmp_path / "trajectory.csv")
