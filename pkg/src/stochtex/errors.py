"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so library code should raise the
most specific type that applies rather than bare ValueError/IOError.
"""


class StochtexError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(StochtexError):
    """Invalid user-supplied parameter (bad scale, fraction, grid...)."""


class DataError(StochtexError):
    """Malformed or structurally unusable input data."""


class ConvergenceError(StochtexError):
    """An iterative solve failed to reach its required tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
