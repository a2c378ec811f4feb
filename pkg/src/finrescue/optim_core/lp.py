"""Linear program containers and the ``solve_lp`` entry point."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from ..errors import DimensionMismatch, InvalidParameter, NumericalFailure

FEAS_TOL = 1e-8
OPT_TOL = 1e-9

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass
class LinearProgram:
    """``max c^T x`` s.t. ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``lb <= x <= ub``.

    Constraint matrices may be dense arrays or scipy sparse matrices.
    Bounds may be infinite.
    """

    c: np.ndarray
    A_ub: Any = None
    b_ub: np.ndarray | None = None
    A_eq: Any = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    names: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        n = self.c.size
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=np.float64).reshape(-1)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=np.float64).reshape(-1)
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise DimensionMismatch("bounds must match the objective length")
        self.A_ub, self.b_ub = _rows(self.A_ub, self.b_ub, n, "A_ub")
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n, "A_eq")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m_ub(self) -> int:
        return self.A_ub.shape[0]

    @property
    def m_eq(self) -> int:
        return self.A_eq.shape[0]

    def with_bounds(self, lb, ub) -> "LinearProgram":
        return LinearProgram(self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq, lb, ub, self.names)

    def residuals(self, x) -> tuple[float, float]:
        """Largest violation of the inequality and equality rows at ``x``."""
        r_ub = float(np.max(self.A_ub @ x - self.b_ub, initial=0.0))
        r_eq = float(np.max(np.abs(self.A_eq @ x - self.b_eq), initial=0.0))
        return r_ub, r_eq


def _rows(A, b, n, name):
    if A is None:
        return sp.csr_matrix((0, n)), np.zeros(0)
    if not sp.issparse(A):
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        if A.size == 0:
            A = A.reshape(0, n)
    if A.shape[1] != n:
        raise DimensionMismatch(f"{name} has {A.shape[1]} columns, expected {n}")
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if b.shape != (A.shape[0],):
        raise DimensionMismatch(f"{name} rows and right-hand side disagree")
    return (sp.csr_matrix(A) if sp.issparse(A) else A), b


@dataclass
class LpSolution:
    """Solver output.  ``y_ub``/``y_eq`` are the row duals of the maximisation
    (``y_ub >= 0``); ``reduced`` holds the bound multipliers, so that at
    optimality ``c = A_ub^T y_ub + A_eq^T y_eq + reduced``."""

    status: str
    x: np.ndarray | None = None
    objective: float = float("nan")
    y_ub: np.ndarray | None = None
    y_eq: np.ndarray | None = None
    reduced: np.ndarray | None = None
    certificate: np.ndarray | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def dual_objective(lp: LinearProgram, sol: LpSolution) -> float:
    """``b^T y`` plus the bound terms; equals the primal value at optimality."""
    val = float(lp.b_ub @ sol.y_ub + lp.b_eq @ sol.y_eq)
    d = sol.reduced
    bound = np.where(d > 0, lp.ub, np.where(d < 0, lp.lb, 0.0))
    mask = d != 0
    return val + float(d[mask] @ bound[mask])


def solve_lp(lp: LinearProgram, method: str = "highs") -> LpSolution:
    """Solve ``lp`` with HiGHS (``method="highs"``) or the in-house bounded
    revised simplex (``method="simplex"``)."""
    if np.any(lp.lb > lp.ub):
        j = int(np.flatnonzero(lp.lb > lp.ub)[0])
        return LpSolution(INFEASIBLE, meta={"backend": method, "reason": f"bounds of x{j} are empty"})
    if method == "highs":
        return _solve_highs(lp)
    if method == "simplex":
        from .simplex import revised_simplex
        return revised_simplex(lp)
    raise InvalidParameter(f"unknown LP method {method!r}")


_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


def _solve_highs(lp: LinearProgram) -> LpSolution:
    bounds = np.column_stack([lp.lb, lp.ub])
    kw = {}
    if lp.m_ub:
        kw["A_ub"], kw["b_ub"] = lp.A_ub, lp.b_ub
    if lp.m_eq:
        kw["A_eq"], kw["b_eq"] = lp.A_eq, lp.b_eq
    res = linprog(-lp.c, bounds=bounds, method="highs-ds", options=_HIGHS_OPTIONS, **kw)
    meta = {"backend": "highs", "iterations": int(getattr(res, "nit", 0)), "message": res.message}
    if res.status == 4:
        # tight tolerances can stall on badly scaled data; HiGHS defaults usually recover
        res = linprog(-lp.c, bounds=bounds, method="highs-ds", **kw)
        meta.update(iterations=int(getattr(res, "nit", 0)), message=res.message,
                    flags=["default_tolerances"])
    if res.status == 2:
        return LpSolution(INFEASIBLE, meta=meta)
    if res.status == 3:
        return LpSolution(UNBOUNDED, meta=meta)
    if res.status != 0:
        raise NumericalFailure(f"HiGHS failed: {res.message}")
    y_ub = -np.asarray(res.ineqlin.marginals) if lp.m_ub else np.zeros(0)
    y_eq = -np.asarray(res.eqlin.marginals) if lp.m_eq else np.zeros(0)
    reduced = -(np.asarray(res.lower.marginals) + np.asarray(res.upper.marginals))
    x = np.asarray(res.x, dtype=np.float64)
    return LpSolution(OPTIMAL, x=x, objective=float(lp.c @ x), y_ub=y_ub, y_eq=y_eq,
                      reduced=reduced, meta=meta)
