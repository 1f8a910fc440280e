"""Exception types shared across the toolkit."""


class ConfigurationError(ValueError):
    """Invalid configuration or unsupported discretization parameters."""

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors or [])


class AssumptionError(ValueError):
    """A mandatory structural assumption on the problem data failed."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SimulationError(RuntimeError):
    """Non-finite state encountered while stepping the forward equation."""

    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step


class SolverError(RuntimeError):
    """Backward solver failure (non-finite driver, rank collapse, ...)."""


class SingularKError(SolverError):
    """K = R + D'PD lost positive definiteness; no feedback operator exists."""

    def __init__(self, message, t=None, sample=None, min_eig=None):
        super().__init__(message)
        self.t = t
        self.sample = sample
        self.min_eig = min_eig


class RegressionWarning(UserWarning):
    """Regression design matrix was rank deficient and the degree was reduced."""
