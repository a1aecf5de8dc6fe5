"""Exception hierarchy.

The CLI maps these onto exit codes: configuration/usage problems exit
with 2, data problems with 3 and numeric failures with 4.
"""


class CopyAlignError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CopyAlignError):
    """Invalid or inconsistent configuration (bad dims, bad flag combos)."""


class DimensionError(CopyAlignError):
    """Tensor or matrix shapes do not line up for the requested operation."""


class DataError(CopyAlignError):
    """Malformed or degenerate input data (files, feature rows, annotations)."""


class DegenerateInputError(DataError):
    """Input is structurally valid but numerically unusable (e.g. zero rows)."""


class GenerationError(DataError):
    """Training-pair fabrication could not satisfy its constraints."""


class OptimizerError(CopyAlignError):
    """Optimizer invoked in an invalid state (e.g. missing gradients)."""


class NumericError(CopyAlignError):
    """Numerical failure at runtime (divergence, NaN loss)."""
