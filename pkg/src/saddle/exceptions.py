"""Exceptions module. Defines custom exceptions for the library."""


class SaddleException(Exception):
    """Base exception for Saddle errors."""


class ConfigurationError(SaddleException):
    """Invalid configuration, dimensions or call arguments."""


class LoadError(SaddleException):
    """A weight file or other artifact could not be read."""


class RolloutError(SaddleException):
    """A trajectory left the finite range.

    Attributes:
        step: Index of the macro time step where the state blew up.
    """

    def __init__(self, message: str, step: int) -> None:
        super().__init__(message)
        self.step = step


class TrainingError(SaddleException):
    """The training loss became non-finite.

    Attributes:
        epoch: Outer iteration at which the loss was observed.
    """

    def __init__(self, message: str, epoch: int) -> None:
        super().__init__(message)
        self.epoch = epoch


class OptimizerError(SaddleException):
    """A gradient or parameter update became non-finite."""


class MetricError(SaddleException):
    """A metric is undefined for the given data."""


class InstanceTooLargeError(SaddleException):
    """An exhaustive enumeration exceeds the configured size limit."""
