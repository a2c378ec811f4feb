"""Debug dump of a (mixed-integer) LP in CPLEX LP text format."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .lp import LinearProgram


def _terms(row, names):
    out = []
    for j, a in zip(*row):
        sign = "-" if a < 0 else "+"
        out.append(f"{sign} {abs(a):.17g} {names[j]}")
    text = " ".join(out) if out else "0 " + names[0]
    return text[2:] if text.startswith("+ ") else text


def _sparse_rows(A):
    A = sp.csr_matrix(A)
    for i in range(A.shape[0]):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        yield A.indices[lo:hi], A.data[lo:hi]


def to_lp_text(lp: LinearProgram, binary=()) -> str:
    names = lp.names or [f"x{j}" for j in range(lp.n)]
    nz = np.flatnonzero(lp.c)
    lines = ["\\ written by finrescue", "Maximize", " obj: " + _terms((nz, lp.c[nz]), names),
             "Subject To"]
    for i, row in enumerate(_sparse_rows(lp.A_ub)):
        lines.append(f" u{i}: {_terms(row, names)} <= {lp.b_ub[i]:.17g}")
    for i, row in enumerate(_sparse_rows(lp.A_eq)):
        lines.append(f" e{i}: {_terms(row, names)} = {lp.b_eq[i]:.17g}")
    lines.append("Bounds")
    binary = set(int(b) for b in binary)
    for j in range(lp.n):
        if j in binary:
            continue
        lo, hi = lp.lb[j], lp.ub[j]
        if np.isinf(lo) and np.isinf(hi):
            lines.append(f" {names[j]} free")
        elif np.isinf(hi):
            lines.append(f" {names[j]} >= {lo:.17g}")
        else:
            lo_s = "-inf" if np.isinf(lo) else f"{lo:.17g}"
            lines.append(f" {lo_s} <= {names[j]} <= {hi:.17g}")
    if binary:
        lines.append("Binaries")
        lines.append(" " + " ".join(names[j] for j in sorted(binary)))
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_lp(lp: LinearProgram, path, binary=()) -> None:
    Path(path).write_text(to_lp_text(lp, binary))
