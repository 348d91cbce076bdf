"""Control-volume thermo-hydraulic network models with decomposition MPC."""

from .bdf import DiscreteModel, HorizonAssembly, assemble_horizon, step_residual
from .heatfield import (
    GridIndex,
    HeatfieldParams,
    build,
    grid_of_state,
    mixing_residual,
    objective_coeffs,
    state_index,
)
from .lpsolve import LpProblem, LpSolution, solve, solve_equality_system_with_duals
from .model import (
    BilinearTerm,
    ConstraintSet,
    CvNetwork,
    ObjectiveForm,
    eval_constraints,
    eval_dynamics_rhs,
    jacobian_wrt_block,
)
from .pdmpc import (
    ClosedLoopResult,
    PdConfig,
    PdTrace,
    Plan,
    SafePlan,
    closed_loop,
    pd_iterate,
)
from .plant import PlantState, Trajectory, rollout, step

__version__ = "0.1.0"

__all__ = [
    "BilinearTerm",
    "ClosedLoopResult",
    "ConstraintSet",
    "CvNetwork",
    "DiscreteModel",
    "GridIndex",
    "HeatfieldParams",
    "HorizonAssembly",
    "LpProblem",
    "LpSolution",
    "ObjectiveForm",
    "PdConfig",
    "PdTrace",
    "Plan",
    "PlantState",
    "SafePlan",
    "Trajectory",
    "assemble_horizon",
    "build",
    "closed_loop",
    "eval_constraints",
    "eval_dynamics_rhs",
    "grid_of_state",
    "jacobian_wrt_block",
    "mixing_residual",
    "objective_coeffs",
    "pd_iterate",
    "rollout",
    "solve",
    "solve_equality_system_with_duals",
    "state_index",
    "step",
    "step_residual",
]
