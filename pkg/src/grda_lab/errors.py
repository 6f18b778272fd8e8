"""Exception hierarchy shared across the package."""


class GrdaError(Exception):
    """Base class for all errors raised by grda_lab."""


class ConfigError(GrdaError, ValueError):
    """Invalid experiment configuration or invalid arguments."""


class NumericError(GrdaError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy result."""


class FactorizationError(NumericError):
    pass


class IntegrationError(NumericError):
    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time


class QuadratureError(NumericError):
    def __init__(self, message, achieved_tol=None):
        super().__init__(message)
        self.achieved_tol = achieved_tol


class KernelError(NumericError):
    pass


class NonFiniteInputError(NumericError):
    """A gradient or data vector contained NaN or inf."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DivergenceError(NumericError):
    """Too many repetitions diverged for the run to be reported."""
