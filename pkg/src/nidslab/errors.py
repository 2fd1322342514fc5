"""Exception hierarchy.

Argument errors are plain ``ValueError``. Everything numerical derives from
:class:`NumericalError` so the CLI can map it to its own exit code.
"""


class NidsLabError(Exception):
    """Base class for all library errors."""


class ConfigurationError(NidsLabError, ValueError):
    """Invalid step sizes, presets, or experiment configuration."""


class NumericalError(NidsLabError):
    """A computation failed or a numerical precondition does not hold."""


class DomainError(NumericalError, ValueError):
    """Input lies outside the subspace on which an operation is defined."""


class GraphSamplingError(NumericalError, RuntimeError):
    """Random graph sampling exhausted its retry budget."""


class NotApplicableError(NumericalError, ValueError):
    """The requested certificate does not apply to this problem."""


class InsufficientDataError(NumericalError, ValueError):
    """A trace is too short for the requested statistic."""


class ConvergenceError(NumericalError, RuntimeError):
    """An iterative solver ran out of iterations."""

    def __init__(self, message, last_residual=float("nan"), iterations=0):
        super().__init__(message)
        self.last_residual = last_residual
        self.iterations = iterations


class DivergenceError(NumericalError, FloatingPointError):
    """An iteration produced non-finite values."""

    def __init__(self, message, iteration=-1):
        super().__init__(message)
        self.iteration = iteration
