"""Canonical bilinear model of a control-volume network.

A network of control volumes (CVs) is described by lumped temperature
states ``theta`` whose continuous-time evolution is

    dtheta/dt = A theta + B u + C z + D d + sum_v X_v [(Y_v mdot) o (Z_v v)]

where ``o`` is the elementwise product, ``mdot`` is the vector of CV mass
flows, ``u = (u_h, u_t)`` are controllable inputs, ``z = (z_h, z_t)`` are
algebraic states and ``d`` are uncontrollable boundary temperatures.
Algebraic equalities, inequalities and cost terms all share the same
affine-plus-bilinear shape, so once the flow block is fixed every
expression in the model becomes affine in the remaining variables.

CV mass flows are not independent variables: each CV flow equals exactly
one pump flow, ``mdot = mflow_map @ u_h``.  Evaluation derives ``mdot``
from ``u_h``; derivatives with respect to ``u_h`` include that chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

#: Variable blocks of a full point, in canonical order. ``mflow`` is the
#: derived CV mass-flow block (``mflow_map @ u_h``).
BLOCKS = ("theta", "z_h", "z_t", "u_h", "u_t", "d", "mflow")

#: Electricity prices are ingested in EUR/kWh and converted to EUR/J
#: wherever they multiply a power.
EUR_PER_KWH_TO_EUR_PER_J = 1.0 / 3.6e6

#: Blocks a caller must supply; ``mflow`` is always derived.
INPUT_BLOCKS = ("theta", "z_h", "z_t", "u_h", "u_t", "d")


class ModelError(ValueError):
    """Base class for model construction/evaluation errors."""


class DimensionMismatch(ModelError):
    """A variable block has the wrong length for this network."""

    def __init__(self, block: str, expected: int, got: int):
        self.block = block
        self.expected = expected
        self.got = got
        super().__init__(f"block {block!r}: expected length {expected}, got {got}")


class UnknownBlock(ModelError):
    def __init__(self, block: str):
        self.block = block
        super().__init__(f"unknown variable block {block!r}; valid blocks: {BLOCKS}")


def _csr(m) -> sp.csr_matrix:
    return sp.csr_matrix(m)


@dataclass(frozen=True)
class BilinearTerm:
    """One term ``x_matrix @ [(y_matrix @ mdot) o (z_matrix @ v)]``.

    ``z_block`` names the block supplying ``v``.  ``z_block = "mflow"`` is
    allowed and covers quadratic flow expressions such as turbulent
    pressure-loss laws.
    """

    x_matrix: sp.csr_matrix
    y_matrix: sp.csr_matrix
    z_matrix: sp.csr_matrix
    z_block: str

    def __post_init__(self):
        object.__setattr__(self, "x_matrix", _csr(self.x_matrix))
        object.__setattr__(self, "y_matrix", _csr(self.y_matrix))
        object.__setattr__(self, "z_matrix", _csr(self.z_matrix))
        if self.z_block not in BLOCKS:
            raise UnknownBlock(self.z_block)
        m = self.x_matrix.shape[1]
        if self.y_matrix.shape[0] != m or self.z_matrix.shape[0] != m:
            raise ModelError(
                "x_matrix column count must equal the row count of y_matrix "
                f"and z_matrix (got {m}, {self.y_matrix.shape[0]}, "
                f"{self.z_matrix.shape[0]})"
            )

    @property
    def n_rows(self) -> int:
        return self.x_matrix.shape[0]

    def value(self, mflow: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.x_matrix @ ((self.y_matrix @ mflow) * (self.z_matrix @ v))

    def scaled(self, factor: float) -> "BilinearTerm":
        return BilinearTerm(self.x_matrix * factor, self.y_matrix, self.z_matrix, self.z_block)


@dataclass(frozen=True)
class ConstraintSet:
    """Rows ``affine . point + sum(bilinear) + constant`` in one shape.

    ``kind`` is ``"equality"`` (rows must be 0) or ``"inequality"`` (rows
    must be <= 0).  The dynamics right-hand side reuses this container
    with ``kind = "equality"``; there the evaluated rows are dtheta/dt.
    """

    n_rows: int
    kind: str
    affine: dict = field(default_factory=dict)  # block name -> csr (n_rows x block size)
    constant: np.ndarray = None
    bilinear_terms: tuple = ()
    row_labels: tuple = ()

    def __post_init__(self):
        if self.kind not in ("equality", "inequality"):
            raise ModelError(f"kind must be 'equality' or 'inequality', got {self.kind!r}")
        affine = {}
        for block, mat in self.affine.items():
            if block not in BLOCKS:
                raise UnknownBlock(block)
            mat = _csr(mat)
            if mat.shape[0] != self.n_rows:
                raise ModelError(
                    f"affine[{block!r}] has {mat.shape[0]} rows, expected {self.n_rows}"
                )
            affine[block] = mat
        object.__setattr__(self, "affine", affine)
        const = (
            np.zeros(self.n_rows) if self.constant is None else np.asarray(self.constant, float)
        )
        if const.shape != (self.n_rows,):
            raise ModelError(f"constant has shape {const.shape}, expected ({self.n_rows},)")
        object.__setattr__(self, "constant", const)
        terms = tuple(self.bilinear_terms)
        for t in terms:
            if t.n_rows != self.n_rows:
                raise ModelError(
                    f"bilinear term has {t.n_rows} rows, expected {self.n_rows}"
                )
        object.__setattr__(self, "bilinear_terms", terms)
        if self.row_labels and len(self.row_labels) != self.n_rows:
            raise ModelError("row_labels length does not match n_rows")

    def evaluate(self, point: dict) -> np.ndarray:
        """Residual at ``point``; the point must already carry ``mflow``."""
        r = self.constant.copy()
        for block, mat in self.affine.items():
            r += mat @ point[block]
        mflow = point["mflow"]
        for t in self.bilinear_terms:
            r += t.value(mflow, point[t.z_block])
        return r

    def jacobian(self, point: dict, block: str) -> sp.csr_matrix:
        """d(residual)/d(block) with ``mflow`` treated as an independent block."""
        if block not in BLOCKS:
            raise UnknownBlock(block)
        n_cols = len(point[block])
        jac = self.affine.get(block, None)
        jac = sp.csr_matrix((self.n_rows, n_cols)) if jac is None else jac.copy()
        mflow = point["mflow"]
        for t in self.bilinear_terms:
            if t.z_block == block:
                jac = jac + t.x_matrix @ sp.diags(t.y_matrix @ mflow) @ t.z_matrix
            if block == "mflow":
                jac = jac + t.x_matrix @ sp.diags(t.z_matrix @ point[t.z_block]) @ t.y_matrix
        return _csr(jac)


@dataclass(frozen=True)
class ObjectiveForm:
    """Scalar cost ``sum_b linear[b].point[b] + sum(rows of bilinear terms)``.

    Forms are stored at power level (watts); ``price_scaled`` marks that a
    per-step electricity price (and the step length) multiplies the form
    when it enters a horizon objective.  Evaluating at the zero point
    always returns 0: there is no constant term.
    """

    linear: dict = field(default_factory=dict)  # block -> dense coefficient vector
    bilinear_terms: tuple = ()
    price_scaled: bool = True

    def __post_init__(self):
        linear = {}
        for block, vec in self.linear.items():
            if block not in BLOCKS:
                raise UnknownBlock(block)
            linear[block] = np.asarray(vec, float)
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "bilinear_terms", tuple(self.bilinear_terms))

    def value(self, point: dict) -> float:
        v = 0.0
        for block, vec in self.linear.items():
            v += float(vec @ point[block])
        mflow = point["mflow"]
        for t in self.bilinear_terms:
            v += float(np.sum(t.value(mflow, point[t.z_block])))
        return v

    def gradient(self, point: dict, block: str) -> np.ndarray:
        """d(value)/d(block), ``mflow`` treated as independent."""
        if block not in BLOCKS:
            raise UnknownBlock(block)
        g = np.zeros(len(point[block]))
        if block in self.linear:
            g += self.linear[block]
        mflow = point["mflow"]
        for t in self.bilinear_terms:
            w = np.asarray(t.x_matrix.sum(axis=0)).ravel()  # row-sum weights
            if t.z_block == block:
                g += t.z_matrix.T @ (w * (t.y_matrix @ mflow))
            if block == "mflow":
                g += t.y_matrix.T @ (w * (t.z_matrix @ point[t.z_block]))
        return g

    def scaled(self, factor: float) -> "ObjectiveForm":
        return ObjectiveForm(
            linear={b: factor * v for b, v in self.linear.items()},
            bilinear_terms=tuple(t.scaled(factor) for t in self.bilinear_terms),
            price_scaled=self.price_scaled,
        )


_TARGETS = ("dynamics", "f_h", "f_t", "g_h", "g_t")


@dataclass(frozen=True)
class CvNetwork:
    """Immutable continuous-time model of one CV network.

    All evaluation operations are pure; instances can be shared freely
    across threads and concurrent solves.
    """

    n_theta: int
    n_zh: int
    n_zt: int
    n_uh: int
    n_ut: int
    n_d: int
    n_mflow: int
    dynamics: ConstraintSet
    f_h: ConstraintSet
    f_t: ConstraintSet
    g_h: ConstraintSet
    g_t: ConstraintSet
    mflow_map: sp.csr_matrix
    capacity: np.ndarray  # J/K per temperature state
    objective_h: ObjectiveForm
    objective_t: ObjectiveForm

    def __post_init__(self):
        object.__setattr__(self, "mflow_map", _csr(self.mflow_map))
        object.__setattr__(self, "capacity", np.asarray(self.capacity, float))
        if self.dynamics.n_rows != self.n_theta:
            raise ModelError("dynamics must have one row per temperature state")
        if self.mflow_map.shape != (self.n_mflow, self.n_uh):
            raise ModelError(
                f"mflow_map shape {self.mflow_map.shape} != ({self.n_mflow}, {self.n_uh})"
            )
        m = self.mflow_map
        if m.nnz != self.n_mflow or not np.all(m.data == 1.0) or np.any(
            np.diff(m.indptr) != 1
        ):
            raise ModelError("mflow_map must have exactly one unit entry per row")
        if self.capacity.shape != (self.n_theta,) or np.any(self.capacity <= 0):
            raise ModelError("capacity must be positive with one entry per state")

    # The dynamics container holds A, B, C, D as affine blocks; expose the
    # conventional matrices as views.
    @property
    def a_matrix(self) -> sp.csr_matrix:
        return self.dynamics.affine["theta"]

    @property
    def b_matrix(self) -> sp.csr_matrix:
        return sp.hstack(
            [self._aff("dynamics", "u_h"), self._aff("dynamics", "u_t")], format="csr"
        )

    @property
    def c_matrix(self) -> sp.csr_matrix:
        return sp.hstack(
            [self._aff("dynamics", "z_h"), self._aff("dynamics", "z_t")], format="csr"
        )

    @property
    def d_matrix(self) -> sp.csr_matrix:
        return self._aff("dynamics", "d")

    @property
    def dyn_bilinear(self) -> tuple:
        return self.dynamics.bilinear_terms

    def _aff(self, target: str, block: str) -> sp.csr_matrix:
        cs = self.constraint_set(target)
        got = cs.affine.get(block)
        if got is not None:
            return got
        return sp.csr_matrix((cs.n_rows, self.block_size(block)))

    def block_size(self, block: str) -> int:
        sizes = {
            "theta": self.n_theta,
            "z_h": self.n_zh,
            "z_t": self.n_zt,
            "u_h": self.n_uh,
            "u_t": self.n_ut,
            "d": self.n_d,
            "mflow": self.n_mflow,
        }
        try:
            return sizes[block]
        except KeyError:
            raise UnknownBlock(block) from None

    def constraint_set(self, target: str) -> ConstraintSet:
        if target not in _TARGETS:
            raise ModelError(f"unknown target {target!r}; valid targets: {_TARGETS}")
        return getattr(self, "dynamics" if target == "dynamics" else target)

    def zero_point(self) -> dict:
        return {b: np.zeros(self.block_size(b)) for b in INPUT_BLOCKS}

    def full_point(self, **blocks) -> dict:
        """Zero point with the given blocks overridden (scalars broadcast)."""
        point = self.zero_point()
        for name, value in blocks.items():
            if name not in INPUT_BLOCKS:
                raise UnknownBlock(name)
            point[name] = np.broadcast_to(
                np.asarray(value, float), (self.block_size(name),)
            ).copy()
        return point

    def with_mflow(self, point: dict) -> dict:
        """Validated copy of ``point`` with the derived ``mflow`` block added."""
        full = {}
        for block in INPUT_BLOCKS:
            if block not in point:
                raise DimensionMismatch(block, self.block_size(block), 0)
            v = np.asarray(point[block], float)
            if v.shape != (self.block_size(block),):
                raise DimensionMismatch(block, self.block_size(block), v.size)
            full[block] = v
        full["mflow"] = self.mflow_map @ full["u_h"]
        return full

    def capacity_antisymmetry_defect(self) -> float:
        """Max absolute defect of ``cap_i A_ij = cap_j A_ji`` off the diagonal."""
        c = sp.diags(self.capacity) @ self.a_matrix
        return float(np.abs((c - c.T).toarray()).max()) if self.n_theta else 0.0


def eval_constraints(net: CvNetwork, point: dict, which: str) -> np.ndarray:
    """Residual of one constraint set at a full variable assignment.

    Equality sets are feasible when the residual is ~0, inequality sets
    when it is <= 0.
    """
    cs = net.constraint_set(which)
    return cs.evaluate(net.with_mflow(point))


def eval_dynamics_rhs(net: CvNetwork, point: dict) -> np.ndarray:
    """dtheta/dt in K/s at a full variable assignment."""
    return net.dynamics.evaluate(net.with_mflow(point))


def jacobian_wrt_block(
    net: CvNetwork, point: dict, target: str, block: str
) -> sp.csr_matrix:
    """Exact derivative of a constraint set (or the dynamics) w.r.t. one block.

    For ``block = "u_h"`` the result includes the chain through the CV
    flows, ``d mflow/d u_h = mflow_map``.  ``block = "mflow"`` returns the
    derivative treating CV flows as free coordinates.
    """
    cs = net.constraint_set(target)
    full = net.with_mflow(point)
    jac = cs.jacobian(full, block)
    if block == "u_h":
        jac = jac + cs.jacobian(full, "mflow") @ net.mflow_map
    return _csr(jac)


def objective_gradient(
    net: CvNetwork, form: ObjectiveForm, point: dict, block: str
) -> np.ndarray:
    """Gradient of an objective form, with the flow chain for ``u_h``."""
    full = net.with_mflow(point)
    g = form.gradient(full, block)
    if block == "u_h":
        g = g + net.mflow_map.T @ form.gradient(full, "mflow")
    return g
