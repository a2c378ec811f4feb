"""Best-bound branch and bound for LPs with binary variables."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import BudgetExceeded, Infeasible, InvalidParameter
from .lp import OPTIMAL, LinearProgram, LpSolution, solve_lp

INT_TOL = 1e-6


@dataclass
class MixedIntegerProgram:
    lp: LinearProgram
    binary: np.ndarray

    def __post_init__(self):
        self.binary = np.asarray(self.binary, dtype=np.int64).reshape(-1)
        if self.binary.size and (self.binary.min() < 0 or self.binary.max() >= self.lp.n):
            raise InvalidParameter("binary index out of range")
        lb = self.lp.lb.copy()
        ub = self.lp.ub.copy()
        lb[self.binary] = np.maximum(lb[self.binary], 0.0)
        ub[self.binary] = np.minimum(ub[self.binary], 1.0)
        self.lp = self.lp.with_bounds(lb, ub)

    def is_feasible(self, x, tol: float = 1e-7) -> bool:
        xb = x[self.binary]
        if np.any(np.abs(xb - np.round(xb)) > INT_TOL):
            return False
        if np.any(x < self.lp.lb - tol) or np.any(x > self.lp.ub + tol):
            return False
        r_ub, r_eq = self.lp.residuals(x)
        scale = 1.0 + max(np.abs(self.lp.b_ub).max(initial=0.0), np.abs(self.lp.b_eq).max(initial=0.0))
        return r_ub <= tol * scale and r_eq <= tol * scale


def relative_gap(bound: float, incumbent: float) -> float:
    return max(0.0, bound - incumbent) / max(abs(incumbent), 1e-10)


def solve_milp(mip: MixedIntegerProgram, rel_gap: float = 1e-4, *,
               heuristic: Callable[[np.ndarray], np.ndarray | None] | None = None,
               node_limit: int = 20000, abs_gap: float = 1e-9,
               objective_step: float | None = None,
               method: str = "highs") -> LpSolution:
    """Maximise over ``mip`` until the incumbent is within ``rel_gap`` of the
    best open LP bound.

    ``heuristic`` maps a fractional relaxation solution to a candidate
    feasible point (or ``None``); it is tried at every fractional node.
    Raises ``Infeasible`` when the root relaxation or the whole tree is
    empty and ``BudgetExceeded`` when ``node_limit`` nodes were expanded
    without certifying the gap (the best solution found rides along on the
    exception as ``.solution``).

    ``objective_step`` declares that every integer-feasible objective value
    is a multiple of it, which lets LP bounds be rounded down to the grid.
    """
    if not rel_gap > 0:
        raise InvalidParameter("rel_gap must be positive")
    lp = mip.lp
    if objective_step is not None and not objective_step > 0:
        raise InvalidParameter("objective_step must be positive")

    def cap(b):
        if objective_step is None:
            return b
        return np.floor(b / objective_step + 1e-9) * objective_step

    counter = itertools.count()

    def relax(lb, ub):
        return solve_lp(lp.with_bounds(lb, ub), method=method)

    root = relax(lp.lb, lp.ub)
    if not root.optimal:
        raise Infeasible(f"root relaxation is {root.status}")
    root_bound = root.objective

    best_x = None
    best_val = -np.inf

    def consider(x):
        nonlocal best_x, best_val
        if x is None:
            return
        x = np.asarray(x, dtype=np.float64).copy()
        x[mip.binary] = np.round(x[mip.binary])
        if not mip.is_feasible(x):
            return False
        val = float(lp.c @ x)
        if val > best_val:
            best_x, best_val = x, val
        return True

    heap = [(-root.objective, next(counter), lp.lb.copy(), lp.ub.copy(), root)]
    nodes = 0
    bound = root.objective
    while heap:
        neg, _, lb, ub, sol = heapq.heappop(heap)
        bound = cap(-neg)
        if best_x is not None and (bound - best_val <= abs_gap
                                   or relative_gap(bound, best_val) <= rel_gap):
            break
        nodes += 1
        if nodes > node_limit:
            heapq.heappush(heap, (neg, next(counter), lb, ub, sol))
            break
        xb = sol.x[mip.binary]
        frac = np.abs(xb - np.round(xb))
        if frac.max(initial=0.0) <= INT_TOL:
            if consider(sol.x) or not frac.any():
                continue
            # rounding the near-integral binaries broke feasibility: keep branching
        if heuristic is not None:
            consider(heuristic(sol.x))
        if frac.max() > INT_TOL:
            k = int(np.argmax(frac - 2.0 * (frac <= INT_TOL)))
        else:
            k = int(np.argmax(frac))
        j = int(mip.binary[k])
        for val in (1.0, 0.0):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = val
            child = relax(clb, cub)
            if not child.optimal:
                continue
            if best_x is not None and cap(child.objective) <= best_val + abs_gap:
                continue
            heapq.heappush(heap, (-child.objective, next(counter), clb, cub, child))
    else:
        bound = best_val

    if best_x is None:
        if nodes > node_limit:
            raise BudgetExceeded(f"no integer solution within {node_limit} nodes")
        raise Infeasible("no integer-feasible point")
    if heap:
        bound = max(bound, max(cap(-h[0]) for h in heap))
    bound = max(bound, best_val)
    gap = relative_gap(bound, best_val)
    meta = {"backend": f"bnb/{method}", "nodes": nodes, "bound": bound, "root_bound": root_bound,
            "gap": gap, "abs_gap": bound - best_val}
    out = LpSolution(OPTIMAL, x=best_x, objective=best_val, meta=meta)
    if nodes > node_limit and gap > rel_gap and bound - best_val > abs_gap:
        exc = BudgetExceeded(f"node limit {node_limit} reached with relative gap {gap:.3g}")
        exc.solution = out
        raise exc
    return out
