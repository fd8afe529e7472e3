"""Finite-state mean field games: discounted, stationary and ergodic solvers,
master fields on the simplex and a numerical certification suite."""
from .core import SimplexError, as_simplex_point, as_tangent_vector, lattice
from .estimators import DiscountedMFG, ErgodicMFG, MasterField as MasterFieldEstimator
from .linearized import derivative_field, duality_gap, solve_linearized
from .markov import PolicyFlow, estimate_cost, simulate_paths, stationary_distribution
from .master import (
    MasterField,
    build_discounted_field,
    evaluate_Ur,
    grad_Ur,
    monotonicity_check,
    residual,
    solve_ergodic_master,
)
from .mfg_solver import (
    ConvergenceError,
    FlowPair,
    StationarySolution,
    solve_discounted,
    solve_ergodic,
    solve_finite_horizon,
    solve_stationary_discounted,
)
from .model import ModelSpec

__version__ = "0.1.0"
