"""Sparse linear programming with certified duals.

Wraps the HiGHS solver (via scipy) behind a problem/solution contract
that reports a multiplier for every constraint row and certifies each
optimal answer against the KKT conditions independently of the solver's
own claim.  HiGHS is deterministic for a fixed input, which downstream
symmetry and reproducibility tests rely on.

Dual conventions
----------------
* ``dual_eq[i]``: sensitivity of the optimum to the equality rhs,
  d(objective)/d(eq_rhs[i]).
* ``dual_ineq[i]``: conventional nonnegative multiplier of row
  ``ineq_matrix @ x <= ineq_rhs`` (equals minus the rhs sensitivity).
* ``dual_lower`` / ``dual_upper``: bound multipliers (reduced costs),
  nonnegative / nonpositive respectively.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

KKT_TOL = 1e-7

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-9,
    "dual_feasibility_tolerance": 1e-9,
}


class LpError(ValueError):
    pass


def _as_csr(mat, n_cols):
    if mat is None:
        return sp.csr_matrix((0, n_cols))
    return sp.csr_matrix(mat)


@dataclass(frozen=True)
class LpProblem:
    """min cost.x  s.t.  eq_matrix x = eq_rhs, ineq_matrix x <= ineq_rhs,
    lower <= x <= upper (infinities allowed)."""

    cost: np.ndarray
    eq_matrix: sp.csr_matrix = None
    eq_rhs: np.ndarray = None
    ineq_matrix: sp.csr_matrix = None
    ineq_rhs: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        c = np.asarray(self.cost, float)
        if not np.all(np.isfinite(c)):
            raise LpError("cost vector must be finite")
        n = len(c)
        object.__setattr__(self, "cost", c)
        eq = _as_csr(self.eq_matrix, n)
        ub = _as_csr(self.ineq_matrix, n)
        if eq.shape[1] != n or ub.shape[1] != n:
            raise LpError("column counts must agree across all parts")
        object.__setattr__(self, "eq_matrix", eq)
        object.__setattr__(self, "ineq_matrix", ub)
        eq_rhs = np.zeros(eq.shape[0]) if self.eq_rhs is None else np.asarray(self.eq_rhs, float)
        ineq_rhs = (
            np.zeros(ub.shape[0]) if self.ineq_rhs is None else np.asarray(self.ineq_rhs, float)
        )
        if len(eq_rhs) != eq.shape[0] or len(ineq_rhs) != ub.shape[0]:
            raise LpError("rhs lengths must match matrix rows")
        object.__setattr__(self, "eq_rhs", eq_rhs)
        object.__setattr__(self, "ineq_rhs", ineq_rhs)
        lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if len(lower) != n or len(upper) != n:
            raise LpError("bound lengths must match the variable count")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n_vars(self) -> int:
        return len(self.cost)


@dataclass(frozen=True)
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded" | "failed"
    primal: np.ndarray = None
    dual_eq: np.ndarray = None
    dual_ineq: np.ndarray = None
    dual_lower: np.ndarray = None
    dual_upper: np.ndarray = None
    objective: float = np.nan
    diagnostics: dict = field(default_factory=dict)

    @property
    def dual_bounds(self) -> np.ndarray:
        """Combined reduced costs (at most one bound is active per var)."""
        return self.dual_lower + self.dual_upper


def kkt_residuals(p: LpProblem, sol: LpSolution) -> dict:
    """Scaled KKT residuals of a claimed-optimal solution."""
    x = sol.primal
    feas_scale = 1.0 + max(
        np.abs(p.eq_rhs).max(initial=0.0), np.abs(p.ineq_rhs).max(initial=0.0)
    )
    stat_scale = 1.0 + np.abs(p.cost).max(initial=0.0)
    r_eq = p.eq_matrix @ x - p.eq_rhs if p.eq_matrix.shape[0] else np.zeros(0)
    slack = p.ineq_rhs - p.ineq_matrix @ x if p.ineq_matrix.shape[0] else np.zeros(0)
    lo_viol = np.where(np.isfinite(p.lower), np.maximum(p.lower - x, 0.0), 0.0)
    hi_viol = np.where(np.isfinite(p.upper), np.maximum(x - p.upper, 0.0), 0.0)
    # Stationarity: c - A_eq' dual_eq + A_ub' dual_ineq - dual_lower - dual_upper = 0
    grad = p.cost - p.eq_matrix.T @ sol.dual_eq + p.ineq_matrix.T @ sol.dual_ineq
    grad = grad - sol.dual_lower - sol.dual_upper
    comp_ineq = (
        np.abs(sol.dual_ineq * slack).max(initial=0.0) if len(slack) else 0.0
    )
    lo_gap = np.where(np.isfinite(p.lower), x - p.lower, 0.0)
    hi_gap = np.where(np.isfinite(p.upper), p.upper - x, 0.0)
    comp_bounds = max(
        np.abs(sol.dual_lower * lo_gap).max(initial=0.0),
        np.abs(sol.dual_upper * hi_gap).max(initial=0.0),
    )
    return {
        "primal_eq": np.abs(r_eq).max(initial=0.0) / feas_scale,
        "primal_ineq": max(np.maximum(-slack, 0.0).max(initial=0.0), 0.0) / feas_scale,
        "primal_bounds": max(lo_viol.max(initial=0.0), hi_viol.max(initial=0.0))
        / feas_scale,
        "stationarity": np.abs(grad).max(initial=0.0) / stat_scale,
        "complementarity": max(comp_ineq, comp_bounds) / (feas_scale * stat_scale),
        "dual_sign": max(
            np.maximum(-sol.dual_ineq, 0.0).max(initial=0.0),
            np.maximum(-sol.dual_lower, 0.0).max(initial=0.0),
            np.maximum(sol.dual_upper, 0.0).max(initial=0.0),
        ),
    }


def solve(p: LpProblem, kkt_tol: float = KKT_TOL, method: str = "highs") -> LpSolution:
    """Solve an LP; optimal answers come with a verified KKT certificate.

    A solver-side numerical failure, or a claimed optimum whose KKT
    residuals exceed ``kkt_tol``, yields status ``"failed"`` with the
    residual diagnostics attached, never a silent wrong answer.
    ``method`` selects the HiGHS algorithm (``highs``, ``highs-ds``,
    ``highs-ipm``); all are deterministic for a fixed input.
    """
    res = linprog(
        p.cost,
        A_ub=p.ineq_matrix if p.ineq_matrix.shape[0] else None,
        b_ub=p.ineq_rhs if p.ineq_matrix.shape[0] else None,
        A_eq=p.eq_matrix if p.eq_matrix.shape[0] else None,
        b_eq=p.eq_rhs if p.eq_matrix.shape[0] else None,
        bounds=np.column_stack([p.lower, p.upper]),
        method=method,
        options=dict(_HIGHS_OPTIONS),
    )
    if res.status == 2:
        return LpSolution(status="infeasible", diagnostics={"message": res.message})
    if res.status == 3:
        return LpSolution(status="unbounded", diagnostics={"message": res.message})
    if res.status != 0:
        return LpSolution(status="failed", diagnostics={"message": res.message})
    n_eq, n_ub = p.eq_matrix.shape[0], p.ineq_matrix.shape[0]
    sol = LpSolution(
        status="optimal",
        primal=np.asarray(res.x, float),
        dual_eq=np.asarray(res.eqlin.marginals, float) if n_eq else np.zeros(0),
        dual_ineq=-np.asarray(res.ineqlin.marginals, float) if n_ub else np.zeros(0),
        dual_lower=np.asarray(res.lower.marginals, float),
        dual_upper=np.asarray(res.upper.marginals, float),
        objective=float(res.fun),
    )
    residuals = kkt_residuals(p, sol)
    if max(residuals.values()) > kkt_tol:
        return LpSolution(
            status="failed",
            primal=sol.primal,
            dual_eq=sol.dual_eq,
            dual_ineq=sol.dual_ineq,
            dual_lower=sol.dual_lower,
            dual_upper=sol.dual_upper,
            objective=sol.objective,
            diagnostics={"message": "KKT certificate failed", **residuals},
        )
    return LpSolution(
        status="optimal",
        primal=sol.primal,
        dual_eq=sol.dual_eq,
        dual_ineq=sol.dual_ineq,
        dual_lower=sol.dual_lower,
        dual_upper=sol.dual_upper,
        objective=sol.objective,
        diagnostics=residuals,
    )


def solve_equality_system_with_duals(
    eq_matrix, eq_rhs, cost, tol: float = 1e-9
) -> LpSolution:
    """Feasibility problem whose equalities pin the point down completely.

    Returns the unique feasible point together with equality duals from
    the adjoint system, so value-function sensitivities stay well-defined
    when the feasible set is a singleton.  Square systems use a sparse LU;
    consistent overdetermined systems fall back to least squares with the
    minimum-norm dual (deterministic).  Inconsistent systems report
    status ``"infeasible"``.
    """
    a = sp.csr_matrix(eq_matrix)
    b = np.asarray(eq_rhs, float)
    c = np.asarray(cost, float)
    m, n = a.shape
    if m < n:
        raise LpError(f"underdetermined equality system ({m} rows, {n} columns)")
    scale = 1.0 + np.abs(b).max(initial=0.0)
    if m == n:
        try:
            lu = spla.splu(a.tocsc())
            x = lu.solve(b)
            dual = lu.solve(c, trans="T")
        except RuntimeError:
            x = None
        if x is not None and np.all(np.isfinite(x)) and np.all(np.isfinite(dual)):
            resid = float(np.abs(a @ x - b).max(initial=0.0))
            if resid <= tol * scale:
                return LpSolution(
                    status="optimal",
                    primal=x,
                    dual_eq=dual,
                    dual_ineq=np.zeros(0),
                    dual_lower=np.zeros(n),
                    dual_upper=np.zeros(n),
                    objective=float(c @ x),
                    diagnostics={"primal_eq": resid / scale},
                )
    dense = a.toarray()
    x, *_ = np.linalg.lstsq(dense, b, rcond=None)
    resid = float(np.abs(dense @ x - b).max(initial=0.0))
    if resid > tol * scale:
        return LpSolution(
            status="infeasible", diagnostics={"primal_eq": resid / scale}
        )
    dual, *_ = np.linalg.lstsq(dense.T, c, rcond=None)
    return LpSolution(
        status="optimal",
        primal=x,
        dual_eq=dual,
        dual_ineq=np.zeros(0),
        dual_lower=np.zeros(n),
        dual_upper=np.zeros(n),
        objective=float(c @ x),
        diagnostics={"primal_eq": resid / scale},
    )


def dump_problem(p: LpProblem, path) -> None:
    """Write an LpProblem as a plain-text triplet dump for external checks.

    Format (documented in the README): a header line, then one record per
    line: ``c j value`` for costs, ``eq i j value`` / ``ub i j value``
    for matrix triplets, ``beq i value`` / ``bub i value`` for right-hand
    sides and ``bnd j lower upper`` for bounds.  Indices are 0-based.
    """
    with open(path, "w", encoding="utf-8") as f:
        f.write(
            f"lp_dump 1 vars={p.n_vars} eq={p.eq_matrix.shape[0]} "
            f"ub={p.ineq_matrix.shape[0]}\n"
        )
        for j, v in enumerate(p.cost):
            if v != 0.0:
                f.write(f"c {j} {float(v)!r}\n")
        for name, mat, rhs in (
            ("eq", p.eq_matrix, p.eq_rhs),
            ("ub", p.ineq_matrix, p.ineq_rhs),
        ):
            coo = mat.tocoo()
            for i, j, v in zip(coo.row, coo.col, coo.data):
                f.write(f"{name} {i} {j} {float(v)!r}\n")
            for i, v in enumerate(rhs):
                f.write(f"b{name} {i} {float(v)!r}\n")
        for j in range(p.n_vars):
            f.write(f"bnd {j} {float(p.lower[j])!r} {float(p.upper[j])!r}\n")
