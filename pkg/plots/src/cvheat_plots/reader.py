"""Reader for the cvheat trajectory CSV schema.

The schema contract: `step`, `time_s`, one `theta_cvNN_{pipe|soil}_K`
column per CV, `mdot_in_P_kgps` per pipe, `dtheta_K`, `theta_in_K`,
`theta_out_K`, `dp_P_Pa`, cost/price columns and the constant soil
bounds `theta_soil_min_K` / `theta_soil_max_K`.  Readers never mutate
their inputs.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass

import numpy as np

_THETA = re.compile(r"theta_cv(\d+)_(pipe|soil)_K$")
_FLOW = re.compile(r"mdot_in_(\d+)_kgps$")


class SchemaError(ValueError):
    pass


class MissingColumn(SchemaError):
    def __init__(self, column: str, path):
        self.column = column
        super().__init__(f"{path}: missing required column {column!r}")


class GridMismatch(SchemaError):
    pass


@dataclass(frozen=True)
class TrajectoryTable:
    path: str
    time_h: np.ndarray
    pipe_labels: tuple
    pipe_theta: np.ndarray  # (T, n_pipe_cv)
    soil_labels: tuple
    soil_theta: np.ndarray  # (T, n_soil_cv)
    flows: np.ndarray  # (T, n_pi)
    dtheta: np.ndarray
    price: np.ndarray
    soil_min: float
    soil_max: float

    def __len__(self) -> int:
        return len(self.time_h)


def read_trajectory(path) -> TrajectoryTable:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    header = rows[0].keys()
    for required in ("time_s", "dtheta_K", "price_eur_per_kwh", "theta_soil_min_K"):
        if required not in header:
            raise MissingColumn(required, path)
    pipe_cols = sorted(
        (c for c in header if _THETA.match(c) and "pipe" in c),
        key=lambda c: int(_THETA.match(c).group(1)),
    )
    soil_cols = sorted(
        (c for c in header if _THETA.match(c) and "soil" in c),
        key=lambda c: int(_THETA.match(c).group(1)),
    )
    if not pipe_cols or not soil_cols:
        raise MissingColumn("theta_cvNN_{pipe|soil}_K", path)
    flow_cols = sorted(
        (c for c in header if _FLOW.match(c)), key=lambda c: int(_FLOW.match(c).group(1))
    )
    if not flow_cols:
        raise MissingColumn("mdot_in_P_kgps", path)

    def col(name):
        return np.array([float(r[name]) for r in rows])

    return TrajectoryTable(
        path=str(path),
        time_h=col("time_s") / 3600.0,
        pipe_labels=tuple(f"CV {int(_THETA.match(c).group(1))}" for c in pipe_cols),
        pipe_theta=np.column_stack([col(c) for c in pipe_cols]),
        soil_labels=tuple(f"CV {int(_THETA.match(c).group(1))}" for c in soil_cols),
        soil_theta=np.column_stack([col(c) for c in soil_cols]),
        flows=np.column_stack([col(c) for c in flow_cols]),
        dtheta=col("dtheta_K"),
        price=col("price_eur_per_kwh"),
        soil_min=float(rows[0]["theta_soil_min_K"]),
        soil_max=float(rows[0]["theta_soil_max_K"]),
    )


def spread_indices(n: int, k: int) -> list[int]:
    """Up to k roughly evenly spread column indices."""
    if n <= k:
        return list(range(n))
    return sorted({round(i * (n - 1) / (k - 1)) for i in range(k)})
