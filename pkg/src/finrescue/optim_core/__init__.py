"""LP, branch-and-bound and simplex-projection engine used by every solver."""

from .lp import (FEAS_TOL, INFEASIBLE, OPT_TOL, OPTIMAL, UNBOUNDED, LinearProgram, LpSolution,
                 dual_objective, solve_lp)
from .lpformat import to_lp_text, write_lp
from .milp import MixedIntegerProgram, relative_gap, solve_milp
from .projection import project_simplex

__all__ = [
    "FEAS_TOL", "INFEASIBLE", "OPT_TOL", "OPTIMAL", "UNBOUNDED",
    "LinearProgram", "LpSolution", "MixedIntegerProgram",
    "dual_objective", "project_simplex", "relative_gap", "solve_lp", "solve_milp",
    "to_lp_text", "write_lp",
]
