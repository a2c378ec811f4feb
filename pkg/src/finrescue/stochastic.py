"""Cash injection when external assets are random.

The budget is allocated to maximise the average weighted payment over a
batch of asset scenarios, either by one large LP, by Benders cuts built
from the clearing duals, or by projected stochastic subgradient steps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .clearing import clear_proportional, clearing_duals
from .errors import ConfigError, InvalidParameter, SizeGuardExceeded, SolverFailure
from .netmodel import FinancialNetwork, InjectionPlan
from .optim_core import LinearProgram, project_simplex, solve_lp

DIRECT_SIZE_GUARD = 50_000


# -- scenarios ----------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSampler:
    """Independent per-node asset draws.

    ``kind`` is ``uniform`` (``a``, ``b`` are the interval ends),
    ``lognormal`` (``a``, ``b`` are the log-mean and log-sd) or ``constant``
    (``a`` is the asset vector).  ``a`` and ``b`` may be scalars or
    per-node arrays.
    """

    kind: str
    a: object = 0.0
    b: object = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "lognormal", "constant"):
            raise InvalidParameter(f"unknown sampler {self.kind!r}")
        if self.kind == "uniform" and np.any(np.asarray(self.a) < 0):
            raise InvalidParameter("uniform sampler must have a nonnegative lower end")
        if self.kind == "lognormal" and np.any(np.asarray(self.b) < 0):
            raise InvalidParameter("lognormal sigma must be nonnegative")

    def draw(self, rng: np.random.Generator, n: int, size: int | None = None) -> np.ndarray:
        shape = (n,) if size is None else (size, n)
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size=shape)
        if self.kind == "lognormal":
            return rng.lognormal(self.a, self.b, size=shape)
        return np.broadcast_to(np.asarray(self.a, dtype=np.float64), shape).copy()

    def describe(self) -> dict:
        def plain(v):
            return np.asarray(v).tolist()
        return {"kind": self.kind, "a": plain(self.a), "b": plain(self.b)}


@dataclass
class ScenarioBatch:
    E: np.ndarray
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.E = np.atleast_2d(np.asarray(self.E, dtype=np.float64))
        if self.E.shape[0] < 1:
            raise InvalidParameter("a batch needs at least one scenario")
        if np.any(self.E < 0) or not np.all(np.isfinite(self.E)):
            raise InvalidParameter("scenario assets must be finite and nonnegative")

    @property
    def M(self) -> int:
        return self.E.shape[0]

    @classmethod
    def sample(cls, sampler: ScenarioSampler, n: int, M: int, seed: int = 0) -> "ScenarioBatch":
        rng = np.random.default_rng(seed)
        return cls(sampler.draw(rng, n, size=M), {"sampler": sampler.describe(), "seed": seed})

    @classmethod
    def from_csv(cls, path) -> "ScenarioBatch":
        try:
            with open(path, newline="") as fh:
                rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
        except OSError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{path}: scenario rows must be numeric ({exc})") from exc
        if not rows or len({len(r) for r in rows}) != 1:
            raise ConfigError(f"{path}: expected rows of equal length")
        return cls(np.array(rows), {"file": str(Path(path))})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.E.tolist())


def _check(net, batch, C):
    C = float(C)
    if not C >= 0:
        raise InvalidParameter(f"budget must be nonnegative, got {C}")
    if batch.E.shape[1] != net.n:
        raise InvalidParameter(f"scenarios have {batch.E.shape[1]} entries, network has {net.n} nodes")
    return C


def scenario_values(net: FinancialNetwork, batch: ScenarioBatch, c) -> np.ndarray:
    """Weighted unpaid liability ``W*(e^m, c)`` for every scenario."""
    return np.array([float(net.w @ clear_proportional(net, c, e=e).unpaid) for e in batch.E])


# -- direct LP ----------------------------------------------------------------

def saa_lp(net: FinancialNetwork, batch: ScenarioBatch, C: float) -> LinearProgram:
    """Block LP over ``[p^1, ..., p^M, c]`` maximising the mean of ``w^T p^m``."""
    n, M = net.n, batch.M
    block = sp.identity(n, format="csr") - net.PiT_sparse
    rows = sp.hstack([sp.block_diag([block] * M, format="csr"),
                      sp.vstack([-sp.identity(n, format="csr")] * M)], format="csr")
    budget = sp.hstack([sp.csr_matrix((1, M * n)), sp.csr_matrix(np.ones((1, n)))], format="csr")
    return LinearProgram(
        c=np.concatenate([np.tile(net.w, M) / M, np.zeros(n)]),
        A_ub=sp.vstack([rows, budget], format="csr"),
        b_ub=np.concatenate([batch.E.reshape(-1), [C]]),
        lb=np.zeros(M * n + n),
        ub=np.concatenate([np.tile(net.pbar, M), np.full(n, np.inf)]))


def solve_saa_direct(net: FinancialNetwork, batch: ScenarioBatch, C: float,
                     *, method: str = "highs") -> tuple[InjectionPlan, np.ndarray]:
    """Solve the sample-average problem as one LP.

    The plan's objective is the mean weighted unpaid liability over the
    batch; the second return value holds the per-scenario values.
    """
    C = _check(net, batch, C)
    n, M = net.n, batch.M
    if M * n > DIRECT_SIZE_GUARD:
        raise SizeGuardExceeded(f"M*N = {M * n} exceeds {DIRECT_SIZE_GUARD}; use benders or sgd")
    sol = solve_lp(saa_lp(net, batch, C), method=method)
    if not sol.optimal:
        raise SolverFailure(f"SAA LP is {sol.status}")
    c = np.maximum(sol.x[M * n:], 0.0)
    W = scenario_values(net, batch, c)
    plan = InjectionPlan(c=c, C=C, objective=float(W.mean()),
                         meta={"solver": "direct", "lp_mean_payment": sol.objective, "M": M})
    return plan, W


# -- Benders --------------------------------------------------------------------

@dataclass
class BendersState:
    """Cuts are stored as ``(const, slope)``: ``theta <= const + slope @ c``."""

    cuts: list[tuple[float, np.ndarray]] = field(default_factory=list)
    c: np.ndarray | None = None
    theta: float = np.inf
    best_c: np.ndarray | None = None
    best_value: float = -np.inf
    rounds: int = 0
    history: list[tuple[float, float]] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.theta - self.best_value


def _subproblems(net, batch, c):
    const = 0.0
    slope = np.zeros(net.n)
    total = 0.0
    for e in batch.E:
        dual = clearing_duals(net, c, e=e)
        total += dual.value
        const += float(net.pbar @ dual.mu + e @ dual.nu)
        slope += dual.nu
    return total, const, slope


def _master(net, state, C):
    n = net.n
    A = np.array([np.concatenate([-s, [1.0]]) for _, s in state.cuts])
    b = np.array([k for k, _ in state.cuts])
    A = np.vstack([A, np.concatenate([np.ones(n), [0.0]])])
    b = np.concatenate([b, [C]])
    lp = LinearProgram(c=np.concatenate([np.zeros(n), [1.0]]), A_ub=A, b_ub=b,
                       lb=np.concatenate([np.zeros(n), [-np.inf]]),
                       ub=np.full(n + 1, np.inf))
    sol = solve_lp(lp)
    if not sol.optimal:
        raise SolverFailure(f"Benders master is {sol.status}")
    return np.maximum(sol.x[:n], 0.0), float(sol.x[n])


def solve_saa_benders(net: FinancialNetwork, batch: ScenarioBatch, C: float, tol: float = 1e-8,
                      *, max_rounds: int = 500) -> tuple[InjectionPlan, BendersState]:
    """Benders decomposition of the sample-average LP.

    Each round clears every scenario at the current injections, turns the
    clearing duals into one aggregated cut and re-solves the master.  Stops
    once the master bound is within ``tol * (1 + |theta|)`` of the summed
    scenario payments.  Values in the state are sums over scenarios; the
    plan's objective is the mean weighted unpaid liability.
    """
    C = _check(net, batch, C)
    if not tol > 0:
        raise InvalidParameter("tol must be positive")
    # payments never exceed liabilities, so this bounds the master from the start
    state = BendersState(c=np.zeros(net.n), theta=batch.M * float(net.w @ net.pbar))
    flags = []
    while True:
        state.rounds += 1
        total, const, slope = _subproblems(net, batch, state.c)
        if total > state.best_value:
            state.best_value, state.best_c = total, state.c.copy()
        state.history.append((state.theta, total))
        if state.theta - state.best_value <= tol * (1.0 + abs(state.theta)):
            break
        if state.rounds >= max_rounds:
            flags.append("max_rounds")
            break
        state.cuts.append((const, slope))
        state.c, state.theta = _master(net, state, C)
    c = state.best_c
    W = scenario_values(net, batch, c)
    plan = InjectionPlan(c=c, C=C, objective=float(W.mean()),
                         meta={"solver": "benders", "rounds": state.rounds, "gap": state.gap,
                               "M": batch.M, "flags": flags})
    return plan, state


# -- stochastic subgradient ---------------------------------------------------

@dataclass
class SgdState:
    c: np.ndarray
    m: int = 0
    gamma0: float = 1.0

    def step_size(self) -> float:
        return self.gamma0 / self.m


def solve_saa_sgd(net: FinancialNetwork, sampler: ScenarioSampler, C: float, iters: int = 2000,
                  *, gamma0: float | None = None, seed: int = 0) -> tuple[InjectionPlan, dict]:
    """Projected stochastic subgradient descent on the expected weighted
    unpaid liability, with step ``gamma0 / m``.

    The default ``gamma0`` is ``C / max(w)`` so that the first step is on
    the scale of the budget.  Returns the average of the second half of the
    iterates; the trace records the sampled objective and the iterate sum.
    """
    C = float(C)
    if not C >= 0:
        raise InvalidParameter(f"budget must be nonnegative, got {C}")
    if iters < 1:
        raise InvalidParameter("iters must be at least 1")
    rng = np.random.default_rng(seed)
    n = net.n
    if gamma0 is None:
        gamma0 = C / max(float(net.w.max(initial=1.0)), 1e-12) if C > 0 else 1.0
    state = SgdState(c=project_simplex(np.zeros(n), C), gamma0=float(gamma0))
    total_w = float(net.w @ net.pbar)
    trace = {"W": [], "budget": []}
    tail = np.zeros(n)
    start = iters // 2
    for m in range(1, iters + 1):
        state.m = m
        e = sampler.draw(rng, n)
        dual = clearing_duals(net, state.c, e=e)
        trace["W"].append(total_w - dual.value)
        state.c = project_simplex(state.c + state.step_size() * dual.nu, C)
        trace["budget"].append(float(state.c.sum()))
        if m > start:
            tail += state.c
    c = tail / (iters - start)
    if C > 0:
        c = project_simplex(c, C)  # guards summation round-off
    plan = InjectionPlan(c=c, C=C, objective=float(np.mean(trace["W"][start:])),
                         meta={"solver": "sgd", "iters": iters, "gamma0": state.gamma0})
    return plan, trace
