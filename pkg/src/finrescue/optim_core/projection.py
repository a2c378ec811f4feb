import numpy as np

from ..errors import InvalidParameter


def project_simplex(c_tilde, C: float) -> np.ndarray:
    """Euclidean projection of ``c_tilde`` onto ``{c >= 0, sum(c) = C}``.

    The solution is ``max(c_tilde - kappa/2, 0)``; the threshold is located
    exactly by scanning the sorted breakpoints.
    """
    v = np.asarray(c_tilde, dtype=np.float64).reshape(-1)
    if C < 0:
        raise InvalidParameter("C must be nonnegative")
    if v.size == 0:
        return v.copy()
    if C == 0:
        return np.zeros_like(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - C
    k = np.arange(1, v.size + 1)
    active = np.flatnonzero(u - css / k > 0)
    # the largest entry is always in the support; rounding can hide it for tiny C
    rho = active[-1] if active.size else 0
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)
