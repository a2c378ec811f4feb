"""Round-synchronous simulation of the distributed proximal dual algorithms.

Each node only knows its own liabilities, assets and weight.  Per round it
sends ``Pi_ij * p_i`` to each creditor ``j``, its cash request ``c_i`` and
stopping bit to the central node, and its price ``q_i`` to its borrowers;
the central node broadcasts the budget price ``lambda``.

Two engines run the same arithmetic:

* ``engine="fast"``: a numba kernel over CSR arrays, for long runs;
* ``engine="bus"``: explicit node objects exchanging ``Message`` records
  through a ``Transport``, which logs traffic for inspection.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from .clearing import clear_proportional
from .errors import InvalidParameter
from .netmodel import ClearingResult, FinancialNetwork, InjectionPlan, weighted_unpaid

MODE_BUDGET = 0  # lambda updated by the central node
MODE_PRICE = 1  # lambda fixed


@dataclass(frozen=True)
class DistConfig:
    alpha: float = 0.1
    beta: float = 0.1
    delta1: float = 1e-6
    delta2: float = 1e-6
    max_rounds: int = 5_000_000
    lam0: float = 0.0
    # record the state every this many rounds (0 disables the trace)
    trace_every: int = 0
    # inner dual loop of the two-stage algorithm
    inner_tol: float = 1e-10
    inner_max: int = 100_000

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise InvalidParameter("step sizes must be positive")
        if not (self.delta1 > 0 and self.delta2 > 0):
            raise InvalidParameter("stopping tolerances must be positive")
        if self.max_rounds < 1:
            raise InvalidParameter("max_rounds must be at least 1")
        if self.lam0 < 0:
            raise InvalidParameter("initial lambda must be nonnegative")


@dataclass
class DistNodeState:
    """Final per-node iterates: last step-1 solution ``(p, c)``, prices ``q``
    and proximal anchors ``(y, z)``."""

    p: np.ndarray
    c: np.ndarray
    q: np.ndarray
    y: np.ndarray
    z: np.ndarray


@dataclass
class CentralState:
    lam: float = 0.0
    t: int = 0
    cash_total: float = 0.0
    all_stopped: bool = False


@dataclass
class DistTrace:
    rounds: list[int] = field(default_factory=list)
    p: list[np.ndarray] = field(default_factory=list)
    c: list[np.ndarray] = field(default_factory=list)
    q: list[np.ndarray] = field(default_factory=list)
    lam: list[float] = field(default_factory=list)
    residual: list[float] = field(default_factory=list)
    message_counts: dict[str, int] = field(default_factory=dict)
    bytes_sent: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["round", "node", "p", "c", "q", "lambda"])
            for r, p, c, q, lam in zip(self.rounds, self.p, self.c, self.q, self.lam):
                for i in range(p.size):
                    out.writerow([r, i, repr(float(p[i])), repr(float(c[i])), repr(float(q[i])),
                                  repr(float(lam))])


# -- fast engine ------------------------------------------------------------------

@numba.njit(cache=True)
def _price_sum(indptr, indices, data, q, out):
    # out_i = sum_{j creditor of i} Pi_ij q_j
    for i in range(out.size):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * q[indices[k]]
        out[i] = s


@numba.njit(cache=True)
def _rounds_kernel(mode, pbar, w, e, C, indptr, indices, data, t_indptr, t_indices, t_data,
                   alpha, beta, d1, d2, max_rounds, trace_every,
                   y, z, q, lam, yt_prev, zt_prev, tr_p, tr_c, tr_q, tr_lam, tr_round):
    n = pbar.size
    s = np.empty(n)
    p = np.empty(n)
    c = np.empty(n)
    inflow = np.empty(n)
    yt = np.empty(n)
    zt = np.empty(n)
    n_trace = 0
    converged = False
    t = 0
    while t < max_rounds:
        # step 1
        _price_sum(indptr, indices, data, q, s)
        total_c = 0.0
        for i in range(n):
            v = y[i] + 0.5 * (w[i] - q[i] + s[i])
            p[i] = min(max(v, 0.0), pbar[i])
            c[i] = max(z[i] + 0.5 * (q[i] - lam), 0.0)
            total_c += c[i]
        if trace_every > 0 and t % trace_every == 0 and n_trace < tr_round.size:
            tr_p[n_trace] = p
            tr_c[n_trace] = c
            tr_q[n_trace] = q
            tr_lam[n_trace] = lam
            tr_round[n_trace] = t
            n_trace += 1
        # step 2: inflow_i = sum_k Pi_ki p_k over borrowers k
        _price_sum(t_indptr, t_indices, t_data, p, inflow)
        for i in range(n):
            q[i] = max(q[i] + beta * (p[i] - e[i] - c[i] - inflow[i]), 0.0)
        if mode == 0:
            lam = max(lam + alpha * (total_c - C), 0.0)
        # step 3
        _price_sum(indptr, indices, data, q, s)
        stop = True
        for i in range(n):
            yt[i] = y[i] + 0.5 * (w[i] - q[i] + s[i])
            zt[i] = z[i] + 0.5 * (q[i] - lam)
            if not (abs(yt[i] - yt_prev[i]) < d1 and abs(zt[i] - zt_prev[i]) < d2):
                stop = False
            y[i] = min(max(yt[i], 0.0), pbar[i])
            z[i] = max(zt[i], 0.0)
            yt_prev[i] = yt[i]
            zt_prev[i] = zt[i]
        t += 1
        if stop:
            converged = True
            break
    return t, lam, converged, n_trace, p, c


@numba.njit(cache=True)
def _two_stage_kernel(mode, pbar, w, e, C, indptr, indices, data, t_indptr, t_indices, t_data,
                      alpha, beta, d1, d2, max_rounds, inner_tol, inner_max, record_inner,
                      y, z, q, lam, inner_log):
    n = pbar.size
    s = np.empty(n)
    p = np.empty(n)
    c = np.empty(n)
    inflow = np.empty(n)
    t = 0
    total_inner = 0
    n_log = 0
    converged = False
    while t < max_rounds:
        if n_log < record_inner:
            # keep the first stage long enough to fill the log
            n_log = 0
        for u in range(inner_max):
            _price_sum(indptr, indices, data, q, s)
            total_c = 0.0
            for i in range(n):
                v = y[i] + 0.5 * (w[i] - q[i] + s[i])
                p[i] = min(max(v, 0.0), pbar[i])
                c[i] = max(z[i] + 0.5 * (q[i] - lam), 0.0)
                total_c += c[i]
            _price_sum(t_indptr, t_indices, t_data, p, inflow)
            if n_log < record_inner:
                # dual objective at (lam, q) for the current anchors
                val = lam * C if mode == 0 else 0.0
                for i in range(n):
                    val += w[i] * p[i] - lam * c[i] - q[i] * (p[i] - inflow[i] - e[i] - c[i])
                    val -= (p[i] - y[i]) ** 2 + (c[i] - z[i]) ** 2
                inner_log[n_log] = val
                n_log += 1
            step = 0.0
            for i in range(n):
                qn = max(q[i] + beta * (p[i] - e[i] - c[i] - inflow[i]), 0.0)
                step = max(step, abs(qn - q[i]))
                q[i] = qn
            if mode == 0:
                ln = max(lam + alpha * (total_c - C), 0.0)
                step = max(step, abs(ln - lam))
                lam = ln
            total_inner += 1
            if step < inner_tol:
                break
        # anchors move to the inner maximiser at the converged multipliers
        _price_sum(indptr, indices, data, q, s)
        stop = True
        for i in range(n):
            pn = min(max(y[i] + 0.5 * (w[i] - q[i] + s[i]), 0.0), pbar[i])
            cn = max(z[i] + 0.5 * (q[i] - lam), 0.0)
            if not (abs(pn - y[i]) < d1 and abs(cn - z[i]) < d2):
                stop = False
            y[i] = pn
            z[i] = cn
        t += 1
        if stop:
            converged = True
            break
    return t, total_inner, lam, converged, n_log


def _csr_parts(M):
    M = sp.csr_matrix(M)
    M.sort_indices()
    return (M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data.astype(np.float64))


def _init_state(net, cfg):
    n = net.n
    return np.zeros(n), np.zeros(n), np.zeros(n), float(cfg.lam0)


def _run_fast(net, mode, C, cfg):
    n = net.n
    y, z, q, lam = _init_state(net, cfg)
    yt_prev = np.full(n, np.nan)
    zt_prev = np.full(n, np.nan)
    n_tr = 0 if cfg.trace_every <= 0 else min(cfg.max_rounds // cfg.trace_every + 1, 200_000)
    tr_p = np.zeros((n_tr, n))
    tr_c = np.zeros((n_tr, n))
    tr_q = np.zeros((n_tr, n))
    tr_lam = np.zeros(n_tr)
    tr_round = np.zeros(n_tr, dtype=np.int64)
    ip, ix, dx = _csr_parts(net.Pi_sparse)
    tip, tix, tdx = _csr_parts(net.PiT_sparse)
    t, lam, converged, k, p, c = _rounds_kernel(
        mode, np.asarray(net.pbar, dtype=np.float64), np.asarray(net.w, dtype=np.float64),
        np.asarray(net.e, dtype=np.float64), float(C), ip, ix, dx, tip, tix, tdx,
        cfg.alpha, cfg.beta, cfg.delta1, cfg.delta2, int(cfg.max_rounds), int(cfg.trace_every),
        y, z, q, float(lam), yt_prev, zt_prev, tr_p, tr_c, tr_q, tr_lam, tr_round)
    trace = DistTrace(rounds=tr_round[:k].tolist(), p=list(tr_p[:k]), c=list(tr_c[:k]),
                      q=list(tr_q[:k]), lam=tr_lam[:k].tolist())
    trace.message_counts = _count_messages(net, t, mode)
    return dict(rounds=int(t), lam=float(lam), converged=bool(converged), p=p, c=c, y=y, z=z, q=q,
                trace=trace)


def _count_messages(net, rounds, mode):
    edges = int(net.Pi_sparse.nnz)
    n = net.n
    counts = {"payment": edges * rounds, "price": edges * rounds, "cash": n * rounds if mode == 0 else 0,
              "lambda": n * rounds if mode == 0 else 0, "stop": n * rounds}
    return counts


# -- message bus engine ---------------------------------------------------------------

CENTRAL = -1
MESSAGE_KINDS = ("payment", "price", "cash", "lambda", "stop")
_PAYLOAD_BYTES = 8
_HEADER_BYTES = 16


@dataclass(frozen=True)
class Message:
    kind: str
    src: int
    dst: int
    round: int
    value: float


class Transport:
    """Holds sent messages until the next ``barrier()``, then makes them
    available to ``collect``.  Subclass ``send`` to add latency models or a
    real transport."""

    def __init__(self, log: bool = False):
        self.log_enabled = log
        self.log: list[Message] = []
        self.counts = {k: 0 for k in MESSAGE_KINDS}
        self.bytes_sent = 0
        self._boxes: dict[int, list[Message]] = {}
        self._pending: list[Message] = []

    def send(self, msg: Message) -> None:
        if msg.kind not in MESSAGE_KINDS:
            raise InvalidParameter(f"unknown message kind {msg.kind!r}")
        self.counts[msg.kind] += 1
        self.bytes_sent += _HEADER_BYTES + _PAYLOAD_BYTES
        if self.log_enabled:
            self.log.append(msg)
        self._pending.append(msg)

    def barrier(self) -> None:
        for msg in self._pending:
            self._boxes.setdefault(msg.dst, []).append(msg)
        self._pending = []

    def collect(self, dst: int) -> list[Message]:
        return self._boxes.pop(dst, [])


class _Node:
    """One institution.  Holds only its own private data."""

    def __init__(self, i, pbar_i, e_i, w_i, creditors, shares, borrowers):
        self.i = i
        self._pbar = pbar_i
        self._e = e_i
        self._w = w_i
        self._creditors = creditors
        self._shares = shares  # Pi_ij for j in creditors
        self._borrowers = borrowers
        self.y = self.z = self.q = 0.0
        self.lam = 0.0
        self.creditor_q = {j: 0.0 for j in creditors}
        self.yt_prev = self.zt_prev = np.nan
        self.p = self.c = 0.0
        self.b = 0
        # with a fixed cash price the central node needs no requests
        self.requests_cash = True

    def _price_sum(self):
        return sum(s * self.creditor_q[j] for j, s in zip(self._creditors, self._shares))

    def step1(self, bus, t):
        v = self.y + 0.5 * (self._w - self.q + self._price_sum())
        self.p = min(max(v, 0.0), self._pbar)
        self.c = max(self.z + 0.5 * (self.q - self.lam), 0.0)
        for j, s in zip(self._creditors, self._shares):
            bus.send(Message("payment", self.i, j, t, s * self.p))
        if self.requests_cash:
            bus.send(Message("cash", self.i, CENTRAL, t, self.c))

    def step2(self, bus, t, inbox):
        inflow = 0.0
        for m in inbox:
            if m.kind == "payment":
                inflow += m.value
        self.q = max(self.q + self.beta * (self.p - self._e - self.c - inflow), 0.0)
        for k in self._borrowers:
            bus.send(Message("price", self.i, k, t, self.q))

    def step3(self, bus, t, inbox):
        for m in inbox:
            if m.kind == "price":
                self.creditor_q[m.src] = m.value
            elif m.kind == "lambda":
                self.lam = m.value
        yt = self.y + 0.5 * (self._w - self.q + self._price_sum())
        zt = self.z + 0.5 * (self.q - self.lam)
        self.b = int(abs(yt - self.yt_prev) < self.d1 and abs(zt - self.zt_prev) < self.d2)
        self.y = min(max(yt, 0.0), self._pbar)
        self.z = max(zt, 0.0)
        self.yt_prev, self.zt_prev = yt, zt
        bus.send(Message("stop", self.i, CENTRAL, t, float(self.b)))


class _Central:
    def __init__(self, n, C, alpha, lam, mode):
        self.n = n
        self.C = C
        self.alpha = alpha
        self.state = CentralState(lam=lam)
        self.mode = mode

    def step2(self, bus, t, inbox):
        total = sum(m.value for m in inbox if m.kind == "cash")
        self.state.cash_total = total
        if self.mode == MODE_BUDGET:
            self.state.lam = max(self.state.lam + self.alpha * (total - self.C), 0.0)
            for i in range(self.n):
                bus.send(Message("lambda", CENTRAL, i, t, self.state.lam))

    def step3(self, inbox):
        self.state.all_stopped = all(m.value == 1.0 for m in inbox if m.kind == "stop")
        self.state.t += 1


def _build_nodes(net, cfg, mode):
    Pi = net.Pi_sparse
    PiT = net.PiT_sparse
    nodes = []
    for i in range(net.n):
        row = Pi.getrow(i)
        creditors = row.indices.tolist()
        shares = row.data.tolist()
        borrowers = PiT.getrow(i).indices.tolist()
        nd = _Node(i, float(net.pbar[i]), float(net.e[i]), float(net.w[i]), creditors, shares, borrowers)
        nd.beta, nd.d1, nd.d2 = cfg.beta, cfg.delta1, cfg.delta2
        nd.lam = cfg.lam0
        nd.requests_cash = mode == MODE_BUDGET
        nodes.append(nd)
    return nodes


def _run_bus(net, mode, C, cfg, transport):
    bus = transport or Transport()
    nodes = _build_nodes(net, cfg, mode)
    central = _Central(net.n, C, cfg.alpha, cfg.lam0, mode)
    trace = DistTrace()
    converged = False
    t = 0
    while t < cfg.max_rounds:
        for nd in nodes:
            nd.step1(bus, t)
        if cfg.trace_every > 0 and t % cfg.trace_every == 0:
            trace.rounds.append(t)
            trace.p.append(np.array([nd.p for nd in nodes]))
            trace.c.append(np.array([nd.c for nd in nodes]))
            trace.q.append(np.array([nd.q for nd in nodes]))
            trace.lam.append(central.state.lam)
        bus.barrier()
        for nd in nodes:
            nd.step2(bus, t, bus.collect(nd.i))
        central.step2(bus, t, bus.collect(CENTRAL))
        bus.barrier()
        for nd in nodes:
            nd.step3(bus, t, bus.collect(nd.i))
        bus.barrier()
        central.step3(bus.collect(CENTRAL))
        t += 1
        if central.state.all_stopped:
            converged = True
            break
    trace.message_counts = dict(bus.counts)
    trace.bytes_sent = bus.bytes_sent
    return dict(rounds=t, lam=central.state.lam, converged=converged,
                p=np.array([nd.p for nd in nodes]), c=np.array([nd.c for nd in nodes]),
                y=np.array([nd.y for nd in nodes]), z=np.array([nd.z for nd in nodes]),
                q=np.array([nd.q for nd in nodes]), trace=trace)


# -- public entry points ---------------------------------------------------------------

def _run(net, mode, C, cfg, engine, transport):
    if engine == "fast" and transport is None:
        return _run_fast(net, mode, C, cfg)
    if engine in ("bus", "fast"):
        return _run_bus(net, mode, C, cfg, transport)
    raise InvalidParameter(f"unknown engine {engine!r}")


def _finish(net, out, C, lam, mode):
    c = np.asarray(out["z"], dtype=np.float64)
    tr = out["trace"]
    if tr.rounds and tr.rounds[-1] != out["rounds"]:
        # close the trace with the converged anchors
        tr.rounds.append(out["rounds"])
        tr.p.append(np.array(out["y"]))
        tr.c.append(c.copy())
        tr.q.append(np.array(out["q"]))
        tr.lam.append(float(out["lam"]))
    res = clear_proportional(net, c)
    flags = [] if out["converged"] else ["max_rounds"]
    W = weighted_unpaid(net, res.p)
    objective = W if mode == MODE_BUDGET else lam * float(c.sum()) + W
    meta = {"rounds": out["rounds"], "converged": out["converged"], "lambda": out["lam"],
            "p_iterate": out["y"], "payment_value": float(net.w @ out["y"]), "q": out["q"],
            "flags": flags,
            "messages": out["trace"].message_counts}
    meta["state"] = DistNodeState(p=out["p"], c=out["c"], q=out["q"], y=out["y"], z=out["z"])
    return InjectionPlan(c=c, C=C if mode == MODE_BUDGET else float(c.sum()), objective=objective,
                         meta=meta), res


def run_algorithm_A(net: FinancialNetwork, C: float, cfg: DistConfig | None = None, *,
                    engine: str = "fast", transport: Transport | None = None,
                    ) -> tuple[InjectionPlan, ClearingResult, DistTrace]:
    """Budgeted distributed algorithm: one dual step per proximal step.

    The plan holds the final cash anchors ``z``; the clearing result
    re-clears the network with them.  A run that hits ``max_rounds`` is
    flagged in ``plan.meta["flags"]`` and still returned.
    """
    C = float(C)
    if not C >= 0:
        raise InvalidParameter(f"budget must be nonnegative, got {C}")
    cfg = cfg or DistConfig()
    out = _run(net, MODE_BUDGET, C, cfg, engine, transport)
    plan, res = _finish(net, out, C, out["lam"], MODE_BUDGET)
    return plan, res, out["trace"]


def run_algorithm_A_prime(net: FinancialNetwork, lam: float, cfg: DistConfig | None = None, *,
                          engine: str = "fast", transport: Transport | None = None,
                          ) -> tuple[InjectionPlan, ClearingResult, DistTrace]:
    """Same iteration with the cash price fixed at ``lam``; the central node
    only gathers stopping bits.  The plan's objective is ``lam*C + W``."""
    lam = float(lam)
    if not lam >= 0:
        raise InvalidParameter(f"lambda must be nonnegative, got {lam}")
    base = cfg or DistConfig()
    cfg = DistConfig(**{**base.__dict__, "lam0": lam})
    out = _run(net, MODE_PRICE, 0.0, cfg, engine, transport)
    plan, res = _finish(net, out, None, lam, MODE_PRICE)
    return plan, res, out["trace"]


def run_algorithm_P(net: FinancialNetwork, C: float, cfg: DistConfig | None = None, *,
                    record_inner: int = 100) -> tuple[InjectionPlan, DistTrace]:
    """Two-stage reference algorithm: the dual gradient loop runs to
    ``inner_tol`` for fixed anchors before the anchors move.

    ``trace.residual`` holds the dual objective over the first
    ``record_inner`` inner iterations of the first stage that runs at least
    that long (or of the last stage if none does).
    """
    C = float(C)
    if not C >= 0:
        raise InvalidParameter(f"budget must be nonnegative, got {C}")
    cfg = cfg or DistConfig()
    y, z, q, lam = _init_state(net, cfg)
    ip, ix, dx = _csr_parts(net.Pi_sparse)
    tip, tix, tdx = _csr_parts(net.PiT_sparse)
    log = np.zeros(max(record_inner, 1))
    t, inner, lam, converged, k = _two_stage_kernel(
        MODE_BUDGET, np.asarray(net.pbar, dtype=np.float64), np.asarray(net.w, dtype=np.float64),
        np.asarray(net.e, dtype=np.float64), C, ip, ix, dx, tip, tix, tdx,
        cfg.alpha, cfg.beta, cfg.delta1, cfg.delta2, int(cfg.max_rounds), cfg.inner_tol,
        int(cfg.inner_max), int(record_inner), y, z, q, float(lam), log)
    trace = DistTrace(residual=log[:k].tolist())
    res = clear_proportional(net, z)
    plan = InjectionPlan(c=z.copy(), C=C, objective=weighted_unpaid(net, res.p),
                         meta={"rounds": int(t), "inner_iterations": int(inner), "lambda": float(lam),
                               "converged": bool(converged), "p_iterate": y.copy(),
                               "payment_value": float(net.w @ y),
                               "flags": [] if converged else ["max_rounds"]})
    return plan, trace
