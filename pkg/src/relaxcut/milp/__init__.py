"""Bundled MILP machinery: LP engines plus branch-and-bound with lazy cuts."""
from .bnb import MilpError, SolveControls, SolveOutcome, SolveStats, Status, model_rows, solve_lp, solve_milp
from .simplex import LPResult, SimplexError, simplex_solve

__all__ = [
    "MilpError", "SolveControls", "SolveOutcome", "SolveStats", "Status",
    "model_rows", "solve_lp", "solve_milp", "LPResult", "SimplexError", "simplex_solve",
]
