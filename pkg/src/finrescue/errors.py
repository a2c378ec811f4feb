"""Exception hierarchy shared by every module.

Solvers that can still hand back a usable answer (non-convergence, a
degenerate dual, a stalled probe) do not raise; they record a flag in the
result's ``meta["flags"]`` list instead.
"""


class FinRescueError(Exception):
    """Base class for all package errors."""


class NetworkError(FinRescueError, ValueError):
    """Malformed network data."""


class NegativeEntry(NetworkError):
    pass


class DimensionMismatch(NetworkError):
    pass


class NonzeroDiagonal(NetworkError):
    pass


class OutOfRangePayment(NetworkError):
    pass


class InvalidParameter(FinRescueError, ValueError):
    """A parameter violates an operation's precondition."""


class UnsupportedVariant(InvalidParameter):
    pass


class SolverFailure(FinRescueError, RuntimeError):
    """A solver could not produce a usable answer."""


class NumericalFailure(SolverFailure):
    pass


class Infeasible(SolverFailure):
    pass


class Unbounded(SolverFailure):
    pass


class BudgetExceeded(SolverFailure):
    """Branch-and-bound hit its node limit before certifying the gap."""


class SizeGuardExceeded(InvalidParameter):
    pass


class ConfigError(FinRescueError):
    pass


class UnknownFigure(ConfigError):
    pass


class IoError(FinRescueError, OSError):
    """Reading or writing a result file failed."""


class UnsupportedTopology(UnsupportedVariant):
    """No closed-form default count exists for this topology."""
