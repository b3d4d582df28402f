"""Exception types shared across the package."""


class KaleidoError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(KaleidoError, ValueError):
    """Array shapes are incompatible for the requested operation."""


class EmptyDatasetError(KaleidoError, ValueError):
    """An operation needs at least one data row and got none."""


class DataRangeError(KaleidoError, ValueError):
    """Data lies outside the range the output activation can reach."""


class DivergenceError(KaleidoError, ArithmeticError):
    """Numerical optimisation produced non-finite or runaway values.

    Attributes:
        last_good_epoch: Last epoch (or step) whose values were finite, or
            ``None`` when not applicable.
    """

    def __init__(self, message, last_good_epoch=None):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch


class ModelFormatError(KaleidoError, ValueError):
    """A serialised model document is malformed or has the wrong version."""


class DataFormatError(KaleidoError, ValueError):
    """An input data file (CSV, IDX, PGM) could not be parsed."""


class ConfigError(KaleidoError, ValueError):
    """Invalid run or component configuration."""


class EnumerationLimitError(KaleidoError, ValueError):
    """A requested exhaustive enumeration is too large to run."""
