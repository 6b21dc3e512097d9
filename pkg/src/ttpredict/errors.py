"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
data problems exit 3 and training divergence exits 4.
"""


class TravelTimeError(Exception):
    """Base class for all package errors."""


class InvalidArgument(TravelTimeError, ValueError):
    """An argument is outside the domain of the operation."""


class ConfigError(TravelTimeError, ValueError):
    """A configuration or shape chain is inconsistent."""


class DataError(TravelTimeError, ValueError):
    """Input data is malformed, unknown or insufficient."""


class NoData(DataError):
    """An aggregate was requested over an empty collection."""


class DivisionDegenerate(InvalidArgument, ZeroDivisionError):
    """A speed of zero (or below) made a traffic formula undefined."""


class DivergenceError(TravelTimeError, ArithmeticError):
    """Training produced non-finite values.

    Attributes:
        epoch: epoch index (0-based) at which divergence was detected.
    """

    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch
