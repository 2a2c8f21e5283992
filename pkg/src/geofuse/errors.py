"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class DataError(ValueError):
    """Input data is malformed, missing or inconsistent."""


class FormatError(DataError):
    """A file on disk does not follow its declared format."""


class NumericError(ArithmeticError):
    """A numerical procedure failed (divergence, non-finite values)."""
