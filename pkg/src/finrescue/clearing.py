"""Clearing payment vectors under proportional and all-or-nothing payments.

Every routine returns the greatest clearing vector of the system
``(Pi, pbar, e + c)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidParameter, NumericalFailure, SolverFailure
from .netmodel import ClearingResult, FinancialNetwork, make_result
from .optim_core import LinearProgram, MixedIntegerProgram, solve_lp, solve_milp

FIXED_POINT = "fixed_point"
FICTITIOUS_DEFAULT = "fictitious_default"
LP = "lp"
_ALIASES = {"fp": FIXED_POINT, "fd": FICTITIOUS_DEFAULT, "lp": LP, "milp": LP,
            FIXED_POINT: FIXED_POINT, FICTITIOUS_DEFAULT: FICTITIOUS_DEFAULT}

# node counts as solvent in Psi when its funds fall short by at most this (relative)
AON_SOLVENCY_RTOL = 1e-9
# classification threshold inside the fictitious-default rounds
FD_RTOL = 1e-12


class DegenerateDualWarning(UserWarning):
    """The optimal dual of the clearing LP is not unique at this point."""


@dataclass(frozen=True)
class ClearingMethod:
    tag: str = FICTITIOUS_DEFAULT
    delta0: float = 1e-10
    max_iter: int = 1_000_000

    def __post_init__(self):
        if self.tag not in _ALIASES:
            raise InvalidParameter(f"unknown clearing method {self.tag!r}")
        object.__setattr__(self, "tag", _ALIASES[self.tag])
        if not self.delta0 > 0:
            raise InvalidParameter("delta0 must be positive")


def _method(method) -> ClearingMethod:
    if method is None:
        return ClearingMethod()
    if isinstance(method, ClearingMethod):
        return method
    return ClearingMethod(str(method))


def _cash(net, c):
    if c is None:
        return np.zeros(net.n)
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    if c.shape != (net.n,):
        raise InvalidParameter(f"c has length {c.size}, expected {net.n}")
    if np.any(c < 0):
        raise InvalidParameter("cash injections must be nonnegative")
    return c


def _assets(net, e):
    return net.e if e is None else np.asarray(e, dtype=np.float64).reshape(-1)


# -- proportional mechanism -------------------------------------------------

def clear_proportional(net: FinancialNetwork, c=None, method=None, *, e=None) -> ClearingResult:
    """Greatest clearing vector under pro-rata payments.

    ``e`` replaces the network's external assets (used for scenario solves).
    """
    m = _method(method)
    c = _cash(net, c)
    funds = _assets(net, e) + c
    if m.tag == FIXED_POINT:
        p, meta = _fixed_point(net, funds, m.delta0, m.max_iter)
    elif m.tag == FICTITIOUS_DEFAULT:
        p, meta = fictitious_default(net, funds)
    else:
        p, meta = _clearing_lp(net, funds)
    meta["method"] = m.tag
    return make_result(net, p, c=c, e=_assets(net, e), meta=meta)


def _fixed_point(net, funds, delta0, max_iter):
    funds = np.ascontiguousarray(funds, dtype=np.float64)
    pbar = np.ascontiguousarray(net.pbar, dtype=np.float64)
    if net.density < 0.1:
        M = net.PiT_sparse
        k, p = _fp_csr(M.indptr.astype(np.int64), M.indices.astype(np.int64),
                       M.data.astype(np.float64), funds, pbar, delta0, max_iter)
    else:
        k, p = _fp_dense(net.PiT_dense, funds, pbar, delta0, max_iter)
    if k > max_iter:
        return p, {"iterations": max_iter, "flags": ["max_iterations"]}
    return p, {"iterations": k, "flags": []}


@numba.njit(cache=True)
def _fp_dense(PiT, funds, pbar, delta0, max_iter):
    p = pbar.copy()
    for k in range(1, max_iter + 1):
        flow = np.dot(PiT, p)
        step = 0.0
        for i in range(p.size):
            v = min(flow[i] + funds[i], pbar[i])
            step = max(step, abs(v - p[i]))
            p[i] = v
        if step < delta0:
            return k, p
    return max_iter + 1, p


@numba.njit(cache=True)
def _fp_csr(indptr, indices, data, funds, pbar, delta0, max_iter):
    n = pbar.size
    p = pbar.copy()
    nxt = np.empty(n)
    for k in range(1, max_iter + 1):
        step = 0.0
        for i in range(n):
            acc = funds[i]
            for t in range(indptr[i], indptr[i + 1]):
                acc += data[t] * p[indices[t]]
            v = min(acc, pbar[i])
            step = max(step, abs(v - p[i]))
            nxt[i] = v
        p, nxt = nxt, p
        if step < delta0:
            return k, p
    return max_iter + 1, p


def fictitious_default(net: FinancialNetwork, funds) -> tuple[np.ndarray, dict]:
    """Eisenberg-Noe fictitious default rounds; exact, at most n rounds.

    Falls back to the LP method (flagged) if a default-set system is
    singular.
    """
    pbar = net.pbar
    p = np.array(pbar)
    prev = np.zeros(net.n, dtype=bool)
    thresh = FD_RTOL * np.maximum(1.0, pbar)
    sparse = net.density < 0.1 and net.n > 200
    for k in range(1, net.n + 2):
        v = net.inflow(p) + funds - pbar
        D = v < -thresh
        if np.array_equal(D, prev):
            return p, {"iterations": k, "flags": []}
        # defaults only accumulate; keep earlier ones even if rounding says otherwise
        D |= prev
        prev = D
        idx = np.flatnonzero(D)
        keep = ~D
        p = np.where(keep, pbar, 0.0)
        rhs = funds[idx] + net.inflow(p)[idx]
        try:
            p[idx] = _solve_default_system(net, idx, rhs, sparse)
        except NumericalFailure:
            q, meta = _clearing_lp(net, funds)
            meta["flags"] = meta.get("flags", []) + ["singular_default_system"]
            meta["iterations"] = k
            return q, meta
        p = np.clip(p, 0.0, pbar)
    raise SolverFailure("fictitious default did not settle within n rounds")


def _solve_default_system(net, idx, rhs, sparse):
    # (I - Pi_DD^T) p_D = rhs
    if sparse:
        A = sp.identity(idx.size, format="csc") - net.PiT_sparse[idx][:, idx].tocsc()
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise NumericalFailure("singular default system") from exc
        x = lu.solve(rhs)
    else:
        A = np.eye(idx.size) - net.Pi[np.ix_(idx, idx)].T
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            try:
                lu = sla.lu_factor(A, check_finite=False)
            except (sla.LinAlgError, sla.LinAlgWarning) as exc:
                raise NumericalFailure("singular default system") from exc
        if np.min(np.abs(np.diag(lu[0])), initial=1.0) < 1e-13:
            raise NumericalFailure("singular default system")
        x = sla.lu_solve(lu, rhs, check_finite=False)
    if not np.all(np.isfinite(x)):
        raise NumericalFailure("singular default system")
    return x


def clearing_lp(net: FinancialNetwork, funds, weights=None) -> LinearProgram:
    """``max weights^T p`` s.t. ``0 <= p <= pbar``, ``(I - Pi^T) p <= funds``."""
    n = net.n
    A = sp.identity(n, format="csr") - net.PiT_sparse
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    return LinearProgram(c=weights, A_ub=A, b_ub=np.asarray(funds, dtype=np.float64),
                         lb=np.zeros(n), ub=np.array(net.pbar))


def _clearing_lp(net, funds):
    sol = solve_lp(clearing_lp(net, funds))
    if not sol.optimal:
        raise SolverFailure(f"clearing LP is {sol.status}")
    return np.clip(sol.x, 0.0, net.pbar), {"iterations": sol.meta.get("iterations", 0), "flags": []}


# -- all-or-nothing mechanism -----------------------------------------------

def clear_all_or_nothing(net: FinancialNetwork, c=None, method=None, *, e=None) -> ClearingResult:
    """Greatest clearing vector when defaulting nodes pay nothing.

    ``fixed_point`` (or ``fictitious_default``, which is the same iteration
    here) applies Psi from ``pbar`` until the default set stops changing;
    ``lp`` solves the all-or-nothing MILP with the cash folded into ``e``.
    """
    m = _method(method)
    c = _cash(net, c)
    e_arr = _assets(net, e)
    funds = e_arr + c
    if m.tag == LP:
        p, meta = _aon_milp(net, funds)
    else:
        p, meta = psi_iteration(net, funds)
    meta["method"] = m.tag
    return make_result(net, p, c=c, e=e_arr, meta=meta)


def psi_iteration(net: FinancialNetwork, funds) -> tuple[np.ndarray, dict]:
    pbar = net.pbar
    solvent = np.ones(net.n, dtype=bool)
    slack = AON_SOLVENCY_RTOL * (1.0 + pbar)
    for k in range(1, net.n + 2):
        p = np.where(solvent, pbar, 0.0)
        nxt = net.inflow(p) + funds >= pbar - slack
        if np.array_equal(nxt, solvent):
            return p, {"iterations": k, "flags": []}
        solvent = nxt
    raise SolverFailure("all-or-nothing iteration did not settle within n rounds")


def aon_milp(net: FinancialNetwork, funds, C: float = 0.0, weights=None) -> MixedIntegerProgram:
    """All-or-nothing bailout MILP over ``x = [p, c, d]``.

    ``max w^T p`` s.t. ``sum(c) <= C``, ``c >= 0``, ``p_i = pbar_i (1 - d_i)``,
    ``pbar_i - (Pi^T p)_i - funds_i - c_i <= pbar_i d_i``, ``d`` binary.
    Nodes with ``pbar_i = 0`` get ``d_i`` fixed at 0.
    """
    n = net.n
    pbar = np.array(net.pbar)
    w = net.w if weights is None else np.asarray(weights, dtype=np.float64)
    I = sp.identity(n, format="csr")
    Z = sp.csr_matrix((n, n))
    D_pbar = sp.diags(pbar, format="csr")
    # -(Pi^T p) - c - diag(pbar) d <= funds - pbar
    A_ub = sp.vstack([
        sp.hstack([sp.csr_matrix((1, n)), sp.csr_matrix(np.ones((1, n))), sp.csr_matrix((1, n))]),
        sp.hstack([-net.PiT_sparse, -I, -D_pbar]),
    ], format="csr")
    b_ub = np.concatenate([[C], np.asarray(funds, dtype=np.float64) - pbar])
    # p + diag(pbar) d = pbar
    A_eq = sp.hstack([I, Z, D_pbar], format="csr")
    c_obj = np.concatenate([w, np.zeros(2 * n)])
    lb = np.zeros(3 * n)
    ub = np.concatenate([pbar, np.full(n, np.inf), np.where(pbar > 0, 1.0, 0.0)])
    names = [f"p{i}" for i in range(n)] + [f"c{i}" for i in range(n)] + [f"d{i}" for i in range(n)]
    lp = LinearProgram(c=c_obj, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=pbar, lb=lb, ub=ub, names=names)
    return MixedIntegerProgram(lp, np.arange(2 * n, 3 * n))


def aon_rounding(net: FinancialNetwork, funds, C: float | None = None):
    """Heuristic for the all-or-nothing MILP.

    Two candidates: keep the relaxation's cash and re-clear with Psi, and,
    when the budget ``C`` is known, a repair pass that starts from the nodes
    the relaxation keeps solvent, pays each exactly what it lacks, drops the
    worst value-per-dollar nodes until the bill fits the budget and then
    greedily adds cheap ones.  Both yield integer-feasible points.
    """
    n = net.n
    pbar = net.pbar
    funds = np.asarray(funds, dtype=np.float64)
    value = net.w * pbar
    live = pbar > 0

    def point(c):
        p, _ = psi_iteration(net, funds + c)
        d = (p < pbar).astype(float) * live
        return np.concatenate([p, c, d]), float(net.w @ p)

    def need(S):
        return np.maximum(pbar - net.inflow(np.where(S, pbar, 0.0)) - funds, 0.0) * S

    def repair(S):
        lack = need(S)
        while lack.sum() > C:
            cand = np.flatnonzero(lack > 0)
            worst = cand[np.argmax(lack[cand] / np.maximum(value[cand], 1e-300))]
            S[worst] = False
            lack = need(S)
        own = np.maximum(pbar - net.inflow(np.where(S, pbar, 0.0)) - funds, 0.0)
        rest = np.flatnonzero(live & ~S)
        for i in rest[np.argsort(own[rest] / np.maximum(value[rest], 1e-300), kind="stable")]:
            S[i] = True
            trial = need(S)
            if trial.sum() > C:
                S[i] = False
            else:
                lack = trial
        return lack

    def heuristic(x):
        best = point(np.maximum(x[n:2 * n], 0.0))
        if C is not None:
            cand = point(repair(live & (x[2 * n:3 * n] < 0.5)))
            if cand[1] > best[1]:
                best = cand
        return best[0]

    return heuristic


def _aon_milp(net, funds):
    mip = aon_milp(net, funds, C=0.0)
    sol = solve_milp(mip, rel_gap=1e-12, heuristic=aon_rounding(net, funds))
    p = sol.x[:net.n]
    return np.where(sol.x[2 * net.n:] > 0.5, 0.0, net.pbar), {
        "iterations": sol.meta["nodes"], "flags": [], "milp_gap": sol.meta["gap"],
        "lp_payments": p}


# -- duals and threat index ---------------------------------------------------

@dataclass
class ClearingDual:
    """Optimal primal/dual pair of the clearing LP ``max w^T p``.

    ``mu`` prices ``p <= pbar`` and ``nu`` prices the funds rows
    ``p <= Pi^T p + e + c``; ``nu`` is the gradient of ``U = max w^T p``
    with respect to the cash at each node.
    """

    p: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    value: float
    dual_value: float
    degenerate: bool
    meta: dict = field(default_factory=dict)


def clearing_duals(net: FinancialNetwork, c=None, *, e=None, w=None) -> ClearingDual:
    """Clearing vector plus an optimal dual of the weighted clearing LP.

    The dual is built from complementary slackness at the default set D:
    ``nu_D = (I - Pi_DD)^{-1} w_D`` and ``nu = 0`` elsewhere, which is the
    right-hand derivative of ``U`` when the dual is not unique.  If that
    system is singular or fails the duality-gap check, the HiGHS dual is
    used instead.
    """
    c = _cash(net, c)
    e_arr = _assets(net, e)
    w = net.w if w is None else np.asarray(w, dtype=np.float64)
    funds = e_arr + c
    p, meta = fictitious_default(net, funds)
    pbar = net.pbar
    value = float(w @ p)
    tol = 1e-9 * np.maximum(1.0, pbar)
    D = (pbar - p) > tol
    idx = np.flatnonzero(D)
    surplus = net.inflow(p) + funds - p
    boundary = (~D) & (pbar > 0) & (surplus <= tol)
    degenerate = bool(np.any(boundary) or np.any(D & (p <= tol)))
    nu = np.zeros(net.n)
    source = "complementary_slackness"
    try:
        if idx.size:
            A = np.eye(idx.size) - net.Pi[np.ix_(idx, idx)]
            nu[idx] = np.linalg.solve(A, w[idx])
            if np.any(nu[idx] < -1e-9) or not np.all(np.isfinite(nu)):
                raise np.linalg.LinAlgError
        nu = np.maximum(nu, 0.0)
        mu = np.where(D, 0.0, np.maximum(w + net.Pi @ nu - nu, 0.0))
        dual_value = float(pbar @ mu + funds @ nu)
        if abs(dual_value - value) > 1e-7 * (1.0 + abs(value)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        lp = clearing_lp(net, funds, w)
        sol = solve_lp(lp)
        if not sol.optimal:
            raise SolverFailure(f"clearing LP is {sol.status}")
        nu = np.maximum(sol.y_ub, 0.0)
        mu = np.maximum(sol.reduced, 0.0)
        dual_value = float(pbar @ mu + funds @ nu)
        source = "lp"
    meta["dual_source"] = source
    return ClearingDual(p=p, mu=mu, nu=nu, value=value, dual_value=dual_value,
                        degenerate=degenerate, meta=meta)


def threat_index(net: FinancialNetwork, c=None, *, e=None, w=None) -> np.ndarray:
    """Marginal reduction of ``w^T (pbar - p)`` per unit of cash at each node.

    Warns with ``DegenerateDualWarning`` when the dual is not unique (some
    node sits exactly on its solvency boundary); the right-hand derivative
    is returned in that case.
    """
    dual = clearing_duals(net, c, e=e, w=w)
    if dual.degenerate:
        warnings.warn("clearing dual is not unique; returning the right derivative",
                      DegenerateDualWarning, stacklevel=2)
    return dual.nu
