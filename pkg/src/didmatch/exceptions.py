"""Exception hierarchy.

Everything raised on purpose derives from :class:`DidMatchError`. The
two branches map onto CLI exit codes: :class:`ValidationError` (bad
input or configuration, exit 1) and :class:`NumericError` (singular
matrices, solver failures, exit 2).
"""


class DidMatchError(Exception):
    """Base class for all package errors."""


class ValidationError(DidMatchError, ValueError):
    """Input data or arguments violate a documented precondition."""


class SchemaError(ValidationError):
    """A required CSV column is missing."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"missing required column {column!r}")


class ParseError(ValidationError):
    """A CSV cell could not be parsed as a number."""

    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as a number")


class ConfigError(ValidationError):
    """Invalid configuration value (alpha, draws, mode names, ...)."""


class EstimationError(ValidationError):
    """The estimator has nothing (or nothing valid) to work with."""


class DomainError(ValidationError):
    """A transform was evaluated outside its domain, e.g. log of a non-positive value."""


class NumericError(DidMatchError, ArithmeticError):
    """Numerical failure: singular matrix, rank deficiency, overflow."""


class LeverageError(NumericError):
    """A projection leverage is numerically 1, so the variance estimator is undefined."""

    def __init__(self, index, leverage):
        self.index = index
        self.leverage = leverage
        super().__init__(
            f"pair {index} has leverage h_ii={leverage!r} >= 1 - 1e-10; "
            "drop covariates from Q or add pairs"
        )


class SolverError(NumericError):
    """The matching solver failed or was asked for an impossible instance."""
