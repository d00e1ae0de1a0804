"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, data-side errors
(ParseError, CheckpointError, DegenerateInputError, UndefinedMetricError) -> 3,
NumericError -> 4.
"""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """An input value lies outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class DegenerateInputError(ValueError):
    """The input is too small or empty for the result to be defined."""


class DegenerateFeatureError(ValueError):
    """A feature has no usable variation (e.g. constant over observed cells)."""


class ParseError(ValueError):
    """A data file could not be parsed; message carries the line number."""


class UndefinedMetricError(ValueError):
    """The metric is undefined for this input (e.g. single-class labels)."""


class CheckpointError(ValueError):
    """A checkpoint file is corrupt, truncated, or of an unknown version."""


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


class NumericError(RuntimeError):
    """Training or inference produced non-finite values."""
