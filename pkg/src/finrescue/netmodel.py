"""One-period borrower-lender network and the value objects built on it."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, is_dataclass
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, NegativeEntry, NonzeroDiagonal, OutOfRangePayment

# node i defaults iff pbar_i - p_i > DEFAULT_RTOL * max(1, pbar_i)
DEFAULT_RTOL = 1e-7


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


class FinancialNetwork:
    """Liability matrix ``L`` (``L[i, j]`` is what i owes j), external assets
    ``e``, unpaid-liability weights ``w`` and default weights ``s``.

    Instances are immutable; ``pbar``, ``Pi`` and the neighbour lists are
    derived once at construction.
    """

    def __init__(self, L, e, w=None, s=None):
        L = np.asarray(L, dtype=np.float64)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise DimensionMismatch(f"L must be square, got shape {L.shape}")
        n = L.shape[0]
        e = np.asarray(e, dtype=np.float64).reshape(-1)
        w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64).reshape(-1)
        s = np.ones(n) if s is None else np.asarray(s, dtype=np.float64).reshape(-1)
        for name, v in (("e", e), ("w", w), ("s", s)):
            if v.shape != (n,):
                raise DimensionMismatch(f"{name} has length {v.shape[0]}, expected {n}")
        if not (np.all(np.isfinite(L)) and np.all(np.isfinite(e))):
            raise NegativeEntry("L and e must be finite")
        if np.any(L < 0):
            raise NegativeEntry("L has negative entries")
        if np.any(e < 0):
            raise NegativeEntry("e has negative entries")
        if np.any(np.diag(L) != 0):
            raise NonzeroDiagonal("L must have a zero diagonal")
        if np.any(~(w > 0)):
            raise NegativeEntry("w must be strictly positive")
        if np.any(~(s > 0)):
            raise NegativeEntry("s must be strictly positive")

        self.n = n
        self.L = _frozen(L)
        self.e = _frozen(e)
        self.w = _frozen(w)
        self.s = _frozen(s)
        pbar = L.sum(axis=1)
        Pi = np.zeros_like(L)
        owes = pbar > 0
        Pi[owes] = L[owes] / pbar[owes, None]
        self.pbar = _frozen(pbar)
        self.Pi = _frozen(Pi)
        # creditors[i]: nodes i owes; borrowers[i]: nodes owing i
        self.creditors = tuple(tuple(np.flatnonzero(L[i]).tolist()) for i in range(n))
        self.borrowers = tuple(tuple(np.flatnonzero(L[:, i]).tolist()) for i in range(n))

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Edge arrays ``(src, dst, share)`` with ``share = Pi[src, dst]``."""
        src, dst = np.nonzero(self.L)
        return src, dst, self.Pi[src, dst].copy()

    @cached_property
    def Pi_sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.Pi)

    @cached_property
    def PiT_sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.Pi.T)

    @cached_property
    def PiT_dense(self) -> np.ndarray:
        """Row-major copy of ``Pi^T`` for repeated dense products."""
        return _frozen(np.ascontiguousarray(self.Pi.T))

    @property
    def density(self) -> float:
        return len(self.edges[0]) / max(1, self.n * self.n)

    def inflow(self, p: np.ndarray) -> np.ndarray:
        """Total received by each node when payments are ``p``: ``Pi^T p``."""
        if self.density < 0.1:
            return self.PiT_sparse @ p
        return self.Pi.T @ p

    def with_assets(self, e) -> "FinancialNetwork":
        return FinancialNetwork(self.L, e, self.w, self.s)

    def with_weights(self, w=None, s=None) -> "FinancialNetwork":
        return FinancialNetwork(self.L, self.e,
                                self.w if w is None else w,
                                self.s if s is None else s)

    def __repr__(self) -> str:
        if self.n <= 8:
            return (f"FinancialNetwork(L={self.L.tolist()!r}, e={self.e.tolist()!r}, "
                    f"w={self.w.tolist()!r}, s={self.s.tolist()!r})")
        return f"FinancialNetwork(n={self.n}, edges={len(self.edges[0])})"

    # -- interchange format -------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        src, dst, _ = self.edges
        return {
            "n": self.n,
            "edges": [[int(i), int(j), float(self.L[i, j])] for i, j in zip(src, dst)],
            "e": self.e.tolist(),
            "w": self.w.tolist(),
            "s": self.s.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FinancialNetwork":
        n = int(d["n"])
        L = np.zeros((n, n))
        for i, j, amount in d.get("edges", []):
            i, j = int(i), int(j)
            if not (0 <= i < n and 0 <= j < n):
                raise DimensionMismatch(f"edge ({i}, {j}) out of range for n={n}")
            L[i, j] += float(amount)
        return build_network(L, d.get("e", np.zeros(n)), d.get("w"), d.get("s"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "FinancialNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_network(L, e, w=None, s=None) -> FinancialNetwork:
    return FinancialNetwork(L, e, w, s)


def default_mask(pbar: np.ndarray, p: np.ndarray, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    return (pbar - p) > rtol * np.maximum(1.0, pbar)


def weighted_unpaid(net: FinancialNetwork, p, w=None) -> float:
    """``w^T (pbar - p)``; ``w`` defaults to the network's own weights."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (net.n,):
        raise DimensionMismatch(f"p has shape {p.shape}, expected ({net.n},)")
    slack = 1e-9 * np.maximum(1.0, net.pbar)
    if np.any(p < -slack) or np.any(p > net.pbar + slack):
        raise OutOfRangePayment("payments must satisfy 0 <= p <= pbar")
    w = net.w if w is None else np.asarray(w, dtype=np.float64)
    return float(w @ (net.pbar - p))


@dataclass
class ClearingResult:
    """Clearing payment vector plus the quantities derived from it."""

    p: np.ndarray
    pbar: np.ndarray
    surplus: np.ndarray
    W: float
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def unpaid(self) -> np.ndarray:
        return self.pbar - self.p

    @property
    def default_flags(self) -> np.ndarray:
        return default_mask(self.pbar, self.p)

    @property
    def defaults(self) -> list[int]:
        return np.flatnonzero(self.default_flags).tolist()

    @property
    def n_defaults(self) -> int:
        return int(self.default_flags.sum())

    @property
    def total_unpaid(self) -> float:
        return float(self.unpaid.sum())

    def to_dict(self) -> dict[str, Any]:
        return {
            "p": self.p.tolist(),
            "defaults": self.defaults,
            "unpaid": self.unpaid.tolist(),
            "surplus": self.surplus.tolist(),
            "W": self.W,
            "N_d": self.n_defaults,
            "total_unpaid": self.total_unpaid,
            "meta": _jsonable(self.meta),
        }


def make_result(net: FinancialNetwork, p, c=None, e=None, meta=None) -> ClearingResult:
    """Package a payment vector; ``e`` overrides the network's assets."""
    p = np.clip(np.asarray(p, dtype=np.float64), 0.0, net.pbar)
    c = np.zeros(net.n) if c is None else np.asarray(c, dtype=np.float64)
    e = net.e if e is None else np.asarray(e, dtype=np.float64)
    r = net.inflow(p) + e + c - p
    return ClearingResult(p=p, pbar=np.array(net.pbar), surplus=r,
                          W=float(net.w @ (net.pbar - p)), meta=dict(meta or {}))


@dataclass
class InjectionPlan:
    c: np.ndarray
    C: float
    objective: float
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(np.sum(self.c))

    def to_dict(self) -> dict[str, Any]:
        return {"c": self.c.tolist(), "C": self.C, "objective": self.objective,
                "meta": _jsonable(self.meta)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in fields(obj)}
    return obj
