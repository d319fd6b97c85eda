"""
Isaacs equations, their K-regularization and the stochastic differential games behind them.

- model, barrier: coefficients, domains, assumption checks and exit-time barriers
- operators: monotone stencils and the discrete Isaacs and Pucci operators
- solver: policy iteration for the discrete Isaacs and regularized equations
- simulator, noise: Monte Carlo for the controlled diffusion
- surface: the boundary-free lifted game
"""

from .barrier import Barrier, make_barrier, verify_barrier
from .base import ConfigurationError, IsaacsLabError, McEstimate
from .model import GameProblem, PucciSpec, extend_problem, validate_assumptions
from .operators import Grid, ScalarField, isaacs_H, pucci_P
from .simulator import MarkovPolicy, McConfig, check_dpp, estimate_payoff, saddle_check, simulate_path
from .solver import SolveConfig, SolveResult, solve_isaacs, solve_regularized
from .surface import LiftedGame, lift_point

__all__ = [
    "Barrier",
    "make_barrier",
    "verify_barrier",
    "ConfigurationError",
    "IsaacsLabError",
    "McEstimate",
    "GameProblem",
    "PucciSpec",
    "extend_problem",
    "validate_assumptions",
    "Grid",
    "ScalarField",
    "isaacs_H",
    "pucci_P",
    "MarkovPolicy",
    "McConfig",
    "check_dpp",
    "estimate_payoff",
    "saddle_check",
    "simulate_path",
    "SolveConfig",
    "SolveResult",
    "solve_isaacs",
    "solve_regularized",
    "LiftedGame",
    "lift_point",
]
