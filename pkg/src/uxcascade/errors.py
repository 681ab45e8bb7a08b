"""Exception hierarchy shared across the package."""


class UxCascadeError(Exception):
    """Base class for all package errors."""


class ConfigError(UxCascadeError):
    """Invalid configuration file or parameter set."""


class DivergenceError(UxCascadeError):
    """Integrator state exceeded the divergence guard (step size too large)."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class ConvergenceError(UxCascadeError):
    """Iterative solver failed to reach its tolerance."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class BracketError(UxCascadeError):
    """Bisection interval does not bracket the requested crossing."""


class ScenarioError(UxCascadeError):
    """Scenario definition is inconsistent or results are incompatible."""
