"""Dense bounded-variable revised simplex.

Two phases over ``[x | slacks | artificials]``.  Dantzig pricing with a
switch to Bland's rule after a run of degenerate pivots; the explicit basis
inverse is updated by elementary row operations and refactorised
periodically.  Meant for small and medium problems and as an independent
cross-check of the HiGHS backend.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import NumericalFailure
from .lp import FEAS_TOL, INFEASIBLE, OPT_TOL, OPTIMAL, UNBOUNDED, LinearProgram, LpSolution

PIVOT_TOL = 1e-11
REFACTOR_EVERY = 64
STALL_LIMIT = 30

BASIC, AT_LOWER, AT_UPPER, FREE = 0, 1, 2, 3


class _Tableau:
    def __init__(self, A, b, lb, ub):
        self.A = A
        self.b = b
        self.lb = lb
        self.ub = ub
        self.m, self.ntot = A.shape
        self.iterations = 0

    def refactor(self):
        try:
            self.Binv = np.linalg.inv(self.A[:, self.basis])
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("singular basis matrix") from exc
        self.x[self.basis] = self.Binv @ (self.b - self._nonbasic_product())

    def _nonbasic_product(self):
        xn = self.x.copy()
        xn[self.basis] = 0.0
        return self.A @ xn

    def run(self, cost, max_iter):
        stall = 0
        bland = False
        since_refactor = 0
        while True:
            if self.iterations >= max_iter:
                raise NumericalFailure(f"simplex exceeded {max_iter} iterations")
            y = cost[self.basis] @ self.Binv
            d = cost - y @ self.A
            st = self.status
            inc = ((st == AT_LOWER) & (self.ub > self.lb)) | (st == FREE)
            dec = (st == AT_UPPER) | (st == FREE)
            score = np.where(inc & (d > OPT_TOL), d, 0.0)
            score = np.maximum(score, np.where(dec & (d < -OPT_TOL), -d, 0.0))
            cand = np.flatnonzero(score > 0)
            if cand.size == 0:
                return "optimal", y, d
            q = int(cand[0]) if bland else int(cand[np.argmax(score[cand])])
            direction = 1.0 if d[q] > 0 else -1.0
            alpha = self.Binv @ self.A[:, q]
            delta = direction * alpha
            xb = self.x[self.basis]
            lbb = self.lb[self.basis]
            ubb = self.ub[self.basis]
            lim = np.full(self.m, np.inf)
            down = delta > PIVOT_TOL
            up = delta < -PIVOT_TOL
            lim[down] = (xb[down] - lbb[down]) / delta[down]
            lim[up] = (ubb[up] - xb[up]) / (-delta[up])
            lim = np.maximum(lim, 0.0)
            t_flip = self.ub[q] - self.lb[q]
            t_row = lim.min() if self.m else np.inf
            if not np.isfinite(t_row) and not np.isfinite(t_flip):
                ray = np.zeros(self.ntot)
                ray[q] = direction
                ray[self.basis] = -delta
                return "unbounded", ray, None
            self.iterations += 1
            if t_flip <= t_row:
                t = t_flip
                self.x[q] += direction * t
                self.x[self.basis] = xb - t * delta
                self.status[q] = AT_UPPER if direction > 0 else AT_LOWER
            else:
                t = t_row
                ties = np.flatnonzero(lim <= t_row + 1e-12)
                if bland:
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(alpha[ties]))])
                leaving = self.basis[r]
                self.x[q] += direction * t
                self.x[self.basis] = xb - t * delta
                # snap the leaving variable onto the bound it hit
                if delta[r] > 0:
                    self.x[leaving] = self.lb[leaving]
                    self.status[leaving] = AT_LOWER
                else:
                    self.x[leaving] = self.ub[leaving]
                    self.status[leaving] = AT_UPPER
                self.basis[r] = q
                self.status[q] = BASIC
                piv = alpha[r]
                row = self.Binv[r] / piv
                self.Binv -= np.outer(alpha, row)
                self.Binv[r] = row
                since_refactor += 1
                if since_refactor >= REFACTOR_EVERY:
                    self.refactor()
                    since_refactor = 0
            if t <= 1e-12:
                stall += 1
                if stall >= STALL_LIMIT:
                    bland = True
            else:
                stall = 0
                bland = False


def revised_simplex(lp: LinearProgram, max_iter: int | None = None) -> LpSolution:
    n, m1, m2 = lp.n, lp.m_ub, lp.m_eq
    m = m1 + m2
    A_ub = lp.A_ub.toarray() if sp.issparse(lp.A_ub) else np.asarray(lp.A_ub, dtype=float)
    A_eq = lp.A_eq.toarray() if sp.issparse(lp.A_eq) else np.asarray(lp.A_eq, dtype=float)
    A0 = np.vstack([A_ub.reshape(m1, n), A_eq.reshape(m2, n)])
    b = np.concatenate([lp.b_ub, lp.b_eq])

    x0 = np.where(np.isfinite(lp.lb), lp.lb, np.where(np.isfinite(lp.ub), lp.ub, 0.0))
    status_x = np.where(np.isfinite(lp.lb), AT_LOWER, np.where(np.isfinite(lp.ub), AT_UPPER, FREE))
    resid = b - A0 @ x0

    # columns: x (n), slacks (m1), artificials (m)
    S = np.zeros((m, m1))
    S[np.arange(m1), np.arange(m1)] = 1.0
    sigma = np.where(resid >= 0, 1.0, -1.0)
    art = np.diag(sigma)
    A = np.hstack([A0, S, art])
    ntot = n + m1 + m
    lb = np.concatenate([lp.lb, np.zeros(m1), np.zeros(m)])
    ub = np.concatenate([lp.ub, np.full(m1, np.inf), np.full(m, np.inf)])

    basis = np.empty(m, dtype=np.int64)
    x = np.concatenate([x0, np.zeros(m1 + m)])
    status = np.concatenate([status_x, np.full(m1 + m, AT_LOWER)])
    need_phase1 = False
    for i in range(m):
        if i < m1 and resid[i] >= 0:
            basis[i] = n + i
        else:
            basis[i] = n + m1 + i
            need_phase1 = need_phase1 or abs(resid[i]) > FEAS_TOL
    status[basis] = BASIC

    tab = _Tableau(A, b, lb, ub)
    tab.basis, tab.x, tab.status = basis, x, status
    tab.refactor()
    max_iter = max_iter or 50 * (ntot + m) + 1000

    if need_phase1 or np.any(basis >= n + m1):
        cost1 = np.zeros(ntot)
        cost1[n + m1:] = -1.0
        outcome, y1, _ = tab.run(cost1, max_iter)
        infeas = float(np.sum(tab.x[n + m1:]))
        if infeas > FEAS_TOL * (1.0 + np.abs(b).max(initial=0.0)):
            return LpSolution(INFEASIBLE, certificate=y1,
                              meta={"backend": "simplex", "iterations": tab.iterations,
                                    "phase1_infeasibility": infeas})
    # artificials are pinned at zero from here on
    tab.ub[n + m1:] = 0.0
    tab.x[n + m1:] = np.where(tab.status[n + m1:] == BASIC, tab.x[n + m1:], 0.0)
    tab.status[n + m1:] = np.where(tab.status[n + m1:] == BASIC, BASIC, AT_LOWER)
    tab.refactor()

    cost = np.zeros(ntot)
    cost[:n] = lp.c
    outcome, y, d = tab.run(cost, max_iter)
    meta = {"backend": "simplex", "iterations": tab.iterations}
    if outcome == "unbounded":
        return LpSolution(UNBOUNDED, certificate=y[:n], meta=meta)
    xs = tab.x[:n].copy()
    xs = np.clip(xs, lp.lb, lp.ub)
    return LpSolution(OPTIMAL, x=xs, objective=float(lp.c @ xs), y_ub=y[:m1].copy(),
                      y_eq=y[m1:].copy(), reduced=d[:n].copy(), meta=meta)
