"""Exception types raised across the package."""


class GridcastError(Exception):
    """Base class for all package errors."""


class SchemaError(GridcastError, ValueError):
    pass


class EmptyInputError(GridcastError, ValueError):
    pass


class UnfillableColumnError(GridcastError, ValueError):
    pass


class InvalidRangeError(GridcastError, ValueError):
    pass


class ShapeError(GridcastError, ValueError):
    pass


class ConfigError(GridcastError, ValueError):
    pass


class LoadError(GridcastError, ValueError):
    pass


class AlignmentError(GridcastError, ValueError):
    pass


class EnsembleSpecError(GridcastError, ValueError):
    pass


class UndefinedMetricError(GridcastError, ValueError):
    pass


class NonFiniteError(GridcastError, ArithmeticError):
    """A loss or gradient became NaN/Inf. ``context`` carries diagnostics."""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context
