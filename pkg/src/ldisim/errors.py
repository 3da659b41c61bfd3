"""Exception hierarchy shared by the simulator, fitters and harness."""


class LdiError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LdiError, ValueError):
    """A numeric argument was non-finite or outside its domain."""


class ConfigurationError(LdiError, ValueError):
    """A parameter set, netlist or experiment description violates its invariants."""


class ConvergenceError(LdiError, RuntimeError):
    """Newton iteration or step control failed.

    ``residual`` holds the last KCL residual norm (amperes) and ``time`` the
    simulation time at which the failure happened, when known.
    """

    def __init__(self, message, residual=float("nan"), time=None):
        super().__init__(message)
        self.residual = residual
        self.time = time


class InsufficientDataError(LdiError, ValueError):
    """Too few cycles, samples or converged estimates to proceed."""


class DegenerateTraceError(LdiError, ValueError):
    """A segment carries no identifiable exponential (flat or too small)."""
