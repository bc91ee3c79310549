"""Exception types shared across the package."""


class SuperstateError(Exception):
    """Base class for all package errors."""


class ZeroProbabilityObservation(SuperstateError):
    """An observation has zero probability under the current belief and action.

    Attributes
    ----------
    step : int or None
        Index of the offending (action, observation) pair when raised while
        filtering a whole history.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InvalidStochasticMatrix(SuperstateError):
    """A matrix row is not a probability vector."""


class DegenerateModel(SuperstateError):
    """No well-defined belief update exists for the sampled inputs."""


class NotConverged(SuperstateError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class DimensionMismatch(SuperstateError, ValueError):
    pass


class NotSimplex(SuperstateError, ValueError):
    pass


class BoundRangeError(SuperstateError, ValueError):
    """A bound evaluator received an input outside its documented range."""


class ModelFormatError(SuperstateError):
    """A model file failed to parse or violates a model invariant."""
