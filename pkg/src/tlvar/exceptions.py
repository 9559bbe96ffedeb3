"""Exception hierarchy shared by the library and the CLI."""


class TLVARError(Exception):
    """Base class for all errors raised by tlvar."""


class ArgumentError(TLVARError, ValueError):
    """Invalid argument: bad mode, rank out of range, shape mismatch."""


class NumericalRankError(TLVARError, ValueError):
    """Input matrix does not have the numerical rank the operation needs."""


class ConditioningError(TLVARError, ArithmeticError):
    """A Gram matrix is singular or too badly conditioned to invert."""


class NonStationaryError(TLVARError, ValueError):
    """Simulation was requested for a non-stationary VAR process."""


class GenerationError(TLVARError, RuntimeError):
    """The simulation design generator could not produce a valid instance."""


class SelectionError(TLVARError, ValueError):
    """Model or rank selection could not be carried out."""


class NumericalFailure(TLVARError, ArithmeticError):
    """An iterative solver diverged; ``trace`` holds the objective history."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class DataError(TLVARError, ValueError):
    """Malformed or unusable input data."""


class ConfigError(TLVARError, ValueError):
    """Invalid experiment configuration."""
