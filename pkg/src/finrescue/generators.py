"""Constructors for the network topologies used in the experiments.

Random variants draw from ``numpy.random.default_rng(seed)`` (PCG64), so a
given ``(spec, seed)`` pair always yields the same network.  Liabilities
that come out exactly zero are simply not stored as edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import InvalidParameter, UnsupportedVariant
from .netmodel import FinancialNetwork

DETERMINISTIC = ("binary_tree", "cycle_star", "core_periphery_fixed", "knapsack", "four_node")
RANDOM = ("random_dense", "random_core_periphery", "random_cp_chains",
          "cvx_core_periphery", "fully_connected", "linear_chain")

_RANDOM_DEFAULTS: dict[str, dict[str, Any]] = {
    "random_dense": {"n": 30, "prob": 0.2, "hi": 2.0},
    "random_core_periphery": {"core": 5, "periphery": 20, "core_hi": 20.0, "periph_hi": 1.0},
    "random_cp_chains": {"core": 5, "chains": 20, "long_cores": 2, "chain_len": 3,
                         "core_hi": 20.0, "periph_hi": 1.0},
    "cvx_core_periphery": {"core": 15, "periphery": 70, "core_hi": 10.0, "periph_hi": 1.0,
                           "e_hi": 0.0, "w_core": 1.0, "w_periph": 1.0},
    "fully_connected": {"n": 1000, "hi": 1.0, "e_hi": 1.0},
    "linear_chain": {"n": 1000, "hi": 10.0, "e_hi": 1.0},
}


@dataclass(frozen=True)
class TopologySpec:
    variant: str
    params: dict[str, Any] = field(default_factory=dict)

    def resolved(self) -> dict[str, Any]:
        out = dict(_RANDOM_DEFAULTS.get(self.variant, {}))
        out.update(self.params)
        return out


def four_node(w: float = 1.0) -> FinancialNetwork:
    """A owes 50 to B and C, B owes 20 to C, C owes 80 to A, D owes 10 to C;
    every node holds 1 in cash.  Node order is A, B, C, D."""
    L = np.zeros((4, 4))
    L[0, 1] = 50
    L[0, 2] = 50
    L[1, 2] = 20
    L[2, 0] = 80
    L[3, 2] = 10
    return FinancialNetwork(L, np.ones(4), w=np.full(4, float(w)))


def gen_binary_tree(S: int) -> FinancialNetwork:
    """Full binary tree in heap order (children of k are 2k+1, 2k+2).

    A node at level s < S-1 owes 2**(S-s) to each child; leaves owe nothing.
    """
    if int(S) != S or S < 2:
        raise InvalidParameter(f"binary tree needs S >= 2 levels, got {S}")
    S = int(S)
    n = 2**S - 1
    L = np.zeros((n, n))
    for k in range(2 ** (S - 1) - 1):
        level = (k + 1).bit_length() - 1
        L[k, 2 * k + 1] = L[k, 2 * k + 2] = 2.0 ** (S - level)
    return FinancialNetwork(L, np.zeros(n))


def tree_level(k: int) -> int:
    return (k + 1).bit_length() - 1


def gen_cycle_star(M: int, a: float) -> FinancialNetwork:
    """Root (node 0) owes ``a`` to the first node of each of ``M`` six-node
    cycles.  Cycle k occupies nodes ``1+6k .. 6+6k``; its first node owes
    ``2a`` to the second, the others owe ``a`` to their successor, and the
    sixth closes the loop."""
    if int(M) != M or M < 1 or not a > 0:
        raise InvalidParameter(f"cycle star needs M >= 1 and a > 0, got M={M}, a={a}")
    M = int(M)
    n = 6 * M + 1
    L = np.zeros((n, n))
    for k in range(M):
        base = 1 + 6 * k
        L[0, base] = a
        L[base, base + 1] = 2 * a
        for i in range(1, 5):
            L[base + i, base + i + 1] = a
        L[base + 5, base] = a
    return FinancialNetwork(L, np.zeros(n))


def gen_core_periphery_fixed() -> FinancialNetwork:
    """Core i, ii, iii are nodes 0, 1, 2; the ten periphery nodes of core k
    are ``3+10k .. 12+10k`` and each owes 20 to its core node."""
    n = 33
    L = np.zeros((n, n))
    L[0, 1] = L[0, 2] = L[1, 2] = 100
    for k in range(3):
        for j in range(10):
            L[3 + 10 * k + j, k] = 20
    return FinancialNetwork(L, np.zeros(n))


def gen_knapsack(pbar_head) -> FinancialNetwork:
    """Node i owes ``pbar_head[i]`` to node M+i and nothing else exists."""
    pbar_head = np.asarray(pbar_head, dtype=np.float64).reshape(-1)
    if pbar_head.size == 0 or np.any(~(pbar_head > 0)):
        raise InvalidParameter("knapsack amounts must be positive")
    M = pbar_head.size
    L = np.zeros((2 * M, 2 * M))
    L[np.arange(M), M + np.arange(M)] = pbar_head
    return FinancialNetwork(L, np.zeros(2 * M), w=np.ones(2 * M))


def _core_periphery(rng, core, periphery, core_hi, periph_hi):
    n = core + core * periphery
    L = np.zeros((n, n))
    block = rng.uniform(0.0, core_hi, size=(core, core))
    np.fill_diagonal(block, 0.0)
    L[:core, :core] = block
    for k in range(core):
        start = core + k * periphery
        L[start:start + periphery, k] = rng.uniform(0.0, periph_hi, size=periphery)
    return L


def gen_random(spec: TopologySpec, seed: int = 0) -> FinancialNetwork:
    variant = spec.variant
    if variant not in RANDOM:
        raise UnsupportedVariant(f"not a random topology: {variant!r}")
    prm = spec.resolved()
    rng = np.random.default_rng(seed)

    if variant == "random_dense":
        n, prob = int(prm["n"]), float(prm["prob"])
        if not 0.0 <= prob <= 1.0:
            raise InvalidParameter("edge probability must lie in [0, 1]")
        mask = rng.random((n, n)) < prob
        L = np.where(mask, rng.uniform(0.0, prm["hi"], size=(n, n)), 0.0)
        np.fill_diagonal(L, 0.0)
        return FinancialNetwork(L, np.zeros(n))

    if variant == "random_core_periphery":
        L = _core_periphery(rng, int(prm["core"]), int(prm["periphery"]),
                            prm["core_hi"], prm["periph_hi"])
        return FinancialNetwork(L, np.zeros(L.shape[0]))

    if variant == "random_cp_chains":
        core, chains = int(prm["core"]), int(prm["chains"])
        long_cores, chain_len = int(prm["long_cores"]), int(prm["chain_len"])
        sizes = [chain_len if k < long_cores else 1 for k in range(core)]
        n = core + chains * sum(sizes)
        L = np.zeros((n, n))
        block = rng.uniform(0.0, prm["core_hi"], size=(core, core))
        np.fill_diagonal(block, 0.0)
        L[:core, :core] = block
        nxt = core
        for k in range(core):
            for _ in range(chains):
                amount = rng.uniform(0.0, prm["periph_hi"])
                # nodes nxt .. nxt+len-1; the first owes the core, each later one owes its predecessor
                L[nxt, k] = amount
                for j in range(1, sizes[k]):
                    L[nxt + j, nxt + j - 1] = amount
                nxt += sizes[k]
        return FinancialNetwork(L, np.zeros(n))

    if variant == "cvx_core_periphery":
        core, periphery = int(prm["core"]), int(prm["periphery"])
        L = _core_periphery(rng, core, periphery, prm["core_hi"], prm["periph_hi"])
        n = L.shape[0]
        e = rng.uniform(0.0, prm["e_hi"], size=n) if prm["e_hi"] > 0 else np.zeros(n)
        w = np.full(n, float(prm["w_periph"]))
        w[:core] = prm["w_core"]
        return FinancialNetwork(L, e, w=w)

    if variant == "fully_connected":
        n = int(prm["n"])
        L = rng.uniform(0.0, prm["hi"], size=(n, n))
        np.fill_diagonal(L, 0.0)
        e = rng.uniform(0.0, prm["e_hi"], size=n)
        return FinancialNetwork(L, e)

    # linear_chain
    n = int(prm["n"])
    L = np.zeros((n, n))
    L[np.arange(n - 1), np.arange(1, n)] = rng.uniform(0.0, prm["hi"], size=n - 1)
    e = rng.uniform(0.0, prm["e_hi"], size=n)
    return FinancialNetwork(L, e)


def generate(spec: TopologySpec, seed: int = 0) -> FinancialNetwork:
    """Dispatch any variant, deterministic or random."""
    prm = dict(spec.params)
    v = spec.variant
    if v == "binary_tree":
        return gen_binary_tree(prm.get("S", 10))
    if v == "cycle_star":
        return gen_cycle_star(prm.get("M", 100), prm.get("a", 10.0))
    if v == "core_periphery_fixed":
        return gen_core_periphery_fixed()
    if v == "knapsack":
        return gen_knapsack(prm["pbar"])
    if v == "four_node":
        return four_node(prm.get("w", 1.0))
    return gen_random(spec, seed)
