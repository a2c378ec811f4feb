"""Optimal cash injection under a budget or a price on cash.

All solvers return an ``InjectionPlan`` together with the clearing result
obtained by re-clearing the network with the chosen injections, so the
reported payments are always a genuine clearing vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .clearing import (aon_milp, aon_rounding, clear_all_or_nothing, clear_proportional,
                       clearing_duals, psi_iteration)
from .errors import BudgetExceeded, InvalidParameter, SolverFailure
from .netmodel import (ClearingResult, FinancialNetwork, InjectionPlan, default_mask,
                       make_result, weighted_unpaid)
from .optim_core import LinearProgram, MixedIntegerProgram, solve_lp, solve_milp

VARIANTS = ("problem1", "problem1_lagrangian", "problem3", "problem1_all_or_nothing")


@dataclass(frozen=True)
class BailoutProblem:
    variant: str
    C: float | None = None
    lam: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidParameter(f"unknown bailout variant {self.variant!r}")
        if self.C is not None and not self.C >= 0:
            raise InvalidParameter("budget C must be nonnegative")
        if self.lam is not None and not self.lam >= 0:
            raise InvalidParameter("lambda must be nonnegative")

    def solve(self, net: FinancialNetwork, **kw):
        if self.variant == "problem1":
            return solve_problem1(net, self.C, **kw)
        if self.variant == "problem1_lagrangian":
            return solve_problem1_lagrangian(net, self.lam, **kw)
        if self.variant == "problem3":
            return solve_problem3(net, self.C, **kw)
        return solve_problem1_aon(net, self.C, **kw)


def _milp(mip, keep_incumbent, **kw):
    """``solve_milp`` that can hand back the incumbent when the node limit
    stops the search, flagged ``node_limit``."""
    try:
        return solve_milp(mip, **kw), []
    except BudgetExceeded as exc:
        if not keep_incumbent or getattr(exc, "solution", None) is None:
            raise
        return exc.solution, ["node_limit"]


def _check_budget(C):
    C = float(C)
    if not C >= 0:
        raise InvalidParameter(f"budget must be nonnegative, got {C}")
    return C


def injection_lp(net: FinancialNetwork, C: float | None, weights=None, cash_price: float = 0.0,
                 e=None) -> LinearProgram:
    """LP over ``x = [p, c]``.

    ``max w^T p - cash_price * 1^T c`` s.t. ``(I - Pi^T) p - c <= e``,
    ``0 <= p <= pbar``, ``c >= 0`` and, when ``C`` is given, ``1^T c <= C``.
    """
    n = net.n
    w = net.w if weights is None else np.asarray(weights, dtype=np.float64)
    e = net.e if e is None else np.asarray(e, dtype=np.float64)
    rows = [sp.hstack([sp.identity(n, format="csr") - net.PiT_sparse, -sp.identity(n, format="csr")])]
    rhs = [e]
    if C is not None:
        rows.append(sp.hstack([sp.csr_matrix((1, n)), sp.csr_matrix(np.ones((1, n)))]))
        rhs.append([C])
    names = [f"p{i}" for i in range(n)] + [f"c{i}" for i in range(n)]
    return LinearProgram(
        c=np.concatenate([w, np.full(n, -float(cash_price))]),
        A_ub=sp.vstack(rows, format="csr"), b_ub=np.concatenate(rhs),
        lb=np.zeros(2 * n), ub=np.concatenate([net.pbar, np.full(n, np.inf)]), names=names)


def _solve(lp, method):
    sol = solve_lp(lp, method=method)
    if not sol.optimal:
        raise SolverFailure(f"injection LP is {sol.status}")
    return sol


def _reclear(net, c, meta=None, lp_p=None):
    res = clear_proportional(net, c)
    if lp_p is not None:
        res.meta["lp_mismatch"] = float(np.max(np.abs(res.p - lp_p), initial=0.0))
    if meta:
        res.meta.update(meta)
    return res


def solve_problem1(net: FinancialNetwork, C: float, *, method: str = "highs",
                   weights=None) -> tuple[InjectionPlan, ClearingResult]:
    """Minimise ``W = w^T (pbar - p)`` with at most ``C`` injected."""
    C = _check_budget(C)
    n = net.n
    w = net.w if weights is None else np.asarray(weights, dtype=np.float64)
    sol = _solve(injection_lp(net, C, w), method)
    c = np.maximum(sol.x[n:], 0.0)
    res = _reclear(net, c, lp_p=sol.x[:n])
    W = float(w @ (net.pbar - res.p))
    plan = InjectionPlan(c=c, C=C, objective=W,
                         meta={"lp_objective": sol.objective, "budget_dual": float(sol.y_ub[-1]),
                               "backend": sol.meta.get("backend")})
    return plan, res


def solve_problem1_lagrangian(net: FinancialNetwork, lam: float, *,
                              method: str = "highs") -> tuple[InjectionPlan, ClearingResult]:
    """Maximise ``w^T p - lam * 1^T c``; the plan's objective is ``lam*C + W``."""
    lam = float(lam)
    if not lam >= 0:
        raise InvalidParameter(f"lambda must be nonnegative, got {lam}")
    n = net.n
    flags = []
    cap = None
    if lam == 0.0:
        # free cash makes c unbounded; nobody needs more than the total shortfall
        cap = float(np.sum(clear_proportional(net).unpaid))
        flags.append("free_cash_capped")
    sol = _solve(injection_lp(net, cap, cash_price=lam), method)
    c = np.maximum(sol.x[n:], 0.0)
    res = _reclear(net, c, lp_p=sol.x[:n])
    W = weighted_unpaid(net, res.p)
    C_star = float(c.sum())
    plan = InjectionPlan(c=c, C=C_star, objective=lam * C_star + W,
                         meta={"lambda": lam, "W": W, "flags": flags})
    return plan, res


def solve_problem1_demange(net: FinancialNetwork, C: float, delta: float | None = None,
                           ) -> tuple[InjectionPlan, ClearingResult]:
    """Inject into the node of largest threat index until some node is rescued.

    Each round probes the current target with ``delta`` to measure how fast
    every defaulting node's payment grows, then advances the target's cash
    up to the point where the first of them becomes solvent.  A probe that
    itself rescues a node is retried with half the probe size.
    """
    C = _check_budget(C)
    n = net.n
    pbar = net.pbar
    if delta is None:
        delta = 1e-6 * float(pbar.max(initial=1.0))
    if not delta > 0:
        raise InvalidParameter("probe size must be positive")
    c = np.zeros(n)
    remaining = C
    flags: list[str] = []
    rounds = 0
    targets = []
    stop_at = 1e-12 * (1.0 + C)
    while remaining > stop_at:
        dual = clearing_duals(net, c)
        p = dual.p
        D = default_mask(pbar, p)
        if not D.any():
            break
        nu = dual.nu
        i0 = int(np.argmax(nu))  # first maximiser, so ties go to the lowest index
        if nu[i0] <= 0:
            flags.append("stalled_probe")
            break
        rounds += 1
        if rounds > n:
            flags.append("round_limit")
            break
        step = delta
        for _ in range(60):
            probe = c.copy()
            probe[i0] += step
            dp = clear_proportional(net, probe).p - p
            if not np.any(D & ~default_mask(pbar, p + dp)):
                break
            step *= 0.5
        else:
            flags.append("probe_rescues")
        movers = D & (dp > 1e-14 * np.maximum(1.0, pbar))
        if not movers.any():
            flags.append("stalled_probe")
            break
        ratio = float(np.min((pbar[movers] - p[movers]) / dp[movers]))
        amount = min(remaining, step * ratio)
        c[i0] += amount
        remaining -= amount
        targets.append(i0)
    res = clear_proportional(net, c)
    plan = InjectionPlan(c=c, C=C, objective=weighted_unpaid(net, res.p),
                         meta={"rounds": rounds, "targets": targets, "unspent": max(remaining, 0.0),
                               "delta": delta, "flags": flags})
    return plan, res


def problem3_milp(net: FinancialNetwork, C: float) -> MixedIntegerProgram:
    """MILP over ``x = [p, c, d]`` maximising ``w^T p - s^T d``."""
    n = net.n
    pbar = np.array(net.pbar)
    I = sp.identity(n, format="csr")
    Z = sp.csr_matrix((n, n))
    A_ub = sp.vstack([
        sp.hstack([I - net.PiT_sparse, -I, Z]),
        sp.hstack([sp.csr_matrix((1, n)), sp.csr_matrix(np.ones((1, n))), sp.csr_matrix((1, n))]),
        # pbar - p <= pbar * d
        sp.hstack([-I, Z, -sp.diags(pbar, format="csr")]),
    ], format="csr")
    b_ub = np.concatenate([net.e, [C], -pbar])
    lb = np.zeros(3 * n)
    ub = np.concatenate([pbar, np.full(n, np.inf), np.ones(n)])
    names = [f"p{i}" for i in range(n)] + [f"c{i}" for i in range(n)] + [f"d{i}" for i in range(n)]
    lp = LinearProgram(c=np.concatenate([net.w, np.zeros(n), -net.s]), A_ub=A_ub, b_ub=b_ub,
                       lb=lb, ub=ub, names=names)
    return MixedIntegerProgram(lp, np.arange(2 * n, 3 * n))


def solve_problem3(net: FinancialNetwork, C: float, *, rel_gap: float = 1e-6,
                   node_limit: int = 20000, keep_incumbent: bool = False,
                   ) -> tuple[InjectionPlan, ClearingResult, np.ndarray]:
    """Minimise ``w^T (pbar - p) + s^T d`` where ``d`` flags defaulting nodes."""
    C = _check_budget(C)
    if np.any(net.w <= 0) or np.any(net.s <= 0):
        raise InvalidParameter("weights w and s must be strictly positive")
    n = net.n

    def heuristic(x):
        c = np.maximum(x[n:2 * n], 0.0)
        total = c.sum()
        if total > C:
            c *= C / total
        p = clear_proportional(net, c).p
        return np.concatenate([p, c, default_mask(net.pbar, p).astype(float)])

    sol, flags = _milp(problem3_milp(net, C), keep_incumbent, rel_gap=rel_gap,
                       heuristic=heuristic, node_limit=node_limit)
    c = np.maximum(sol.x[n:2 * n], 0.0)
    res = _reclear(net, c)
    d = default_mask(net.pbar, res.p).astype(np.int64)
    D = float(net.w @ (net.pbar - res.p) + net.s @ d)
    meta = {k: sol.meta[k] for k in ("nodes", "gap", "bound")}
    meta["flags"] = flags
    plan = InjectionPlan(c=c, C=C, objective=D, meta=meta)
    return plan, res, d


def _value_grid(values) -> float | None:
    """Common integer step of the per-node values, if they are all integers."""
    v = np.round(values)
    if np.any(np.abs(values - v) > 1e-9 * np.maximum(1.0, np.abs(values))) or not np.any(v):
        return None
    return float(np.gcd.reduce(np.abs(v).astype(np.int64)))


def solve_problem1_aon(net: FinancialNetwork, C: float, rel_gap: float = 1e-4, *,
                       node_limit: int = 20000, keep_incumbent: bool = False,
                   ) -> tuple[InjectionPlan, ClearingResult, np.ndarray]:
    """Maximise ``w^T p`` when defaulting nodes pay nothing.

    The plan's ``meta`` carries the certified relative gap between the
    incumbent and the best LP bound.
    """
    C = _check_budget(C)
    n = net.n
    mip = aon_milp(net, net.e, C)
    sol, flags = _milp(mip, keep_incumbent, rel_gap=rel_gap, heuristic=aon_rounding(net, net.e, C),
                       node_limit=node_limit, objective_step=_value_grid(net.w * net.pbar))
    c = np.maximum(sol.x[n:2 * n], 0.0)
    p, meta = psi_iteration(net, net.e + c)
    meta.update({k: sol.meta[k] for k in ("nodes", "gap", "bound", "root_bound")})
    meta["method"] = "milp"
    res = make_result(net, p, c=c, meta=meta)
    d = (p < net.pbar).astype(np.int64) * (net.pbar > 0)
    plan = InjectionPlan(c=c, C=C, objective=float(net.w @ p),
                         meta={"gap": sol.meta["gap"], "bound": sol.meta["bound"],
                               "nodes": sol.meta["nodes"], "flags": flags})
    return plan, res, d


def aon_value(net: FinancialNetwork, c=None) -> float:
    """``w^T p`` of the all-or-nothing clearing vector for injections ``c``."""
    return float(net.w @ clear_all_or_nothing(net, c).p)
