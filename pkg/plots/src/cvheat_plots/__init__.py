"""Figures from cvheat CSV artifacts (consumes only the CSV schema)."""

from .closed_loop import plot_closed_loop
from .discretization import plot_discretization
from .reader import GridMismatch, MissingColumn, SchemaError, read_trajectory

__all__ = [
    "GridMismatch",
    "MissingColumn",
    "SchemaError",
    "plot_closed_loop",
    "plot_discretization",
    "read_trajectory",
]
