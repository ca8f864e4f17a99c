"""Exception types raised across the package."""


class SetValuedHJBError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SetValuedHJBError, ValueError):
    """Invalid scenario, cone, or run configuration."""


class UsageError(SetValuedHJBError, ValueError):
    """An operation was called with arguments outside its contract."""


class DomainError(SetValuedHJBError, ValueError):
    """Time arguments outside [0, T] or out of order."""


class HypothesisError(SetValuedHJBError):
    """A standing hypothesis (h1-h5) failed a numerical probe."""

    def __init__(self, hypothesis, message, probe=None):
        self.hypothesis = hypothesis
        self.probe = probe
        text = f"{hypothesis}: {message}"
        if probe is not None:
            text += f" (probe point {probe})"
        super().__init__(text)


class InversionError(SetValuedHJBError):
    """Newton inversion of the Lagrangian gradient did not converge."""

    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (residual norm {residual:.3e})")


class SolverError(SetValuedHJBError):
    """The stationarity solve for the costate p did not converge."""

    def __init__(self, message, trace=()):
        self.trace = list(trace)
        super().__init__(message)


class ConditioningError(SolverError):
    """The Newton Jacobian is too ill-conditioned to trust the step."""


class OracleError(SetValuedHJBError):
    """A brute-force oracle could not produce a trustworthy answer."""
