"""Differentiable multi-sector trade model with tariff and subsidy games."""

from .autodiff import DomainError, Tape, Var, gradient, jacobian, vjp
from .economy import (
    Calibration,
    CalibrationError,
    PolicyWedges,
    generate_synthetic,
    load_calibration,
    save_calibration,
    table_a1_elasticities,
)
from .equilibrium import (
    EquilibriumError,
    HatEquilibrium,
    NonConvergenceError,
    SingularSystemError,
    SolverOptions,
    hat_map,
    solve_fixed_point,
)
from .game import (
    BestResponseOptions,
    GameResult,
    NashOptions,
    best_response,
    cooperative_solve,
    nash_solve,
    subsidy_perturbation_experiment,
)
from .instruments import Instruments, Scenario, ScenarioMask, build_mask
from .optimizer import AdamHyper, AdamState, adam_step, clip_gradient, project
from .sensitivity import GradientVector, finite_difference_gradient, policy_gradient

__version__ = "0.1.0"
