"""Exception types shared across the package."""

import numpy as np


class ConfigurationError(ValueError):
    """Raised when parameters are inconsistent or a required input is missing."""


class DimensionError(ValueError):
    """Raised when vector or matrix shapes do not conform."""


class BreakdownError(np.linalg.LinAlgError):
    """Cholesky factorization met a non-positive pivot.

    The 0-based index of the failing pivot is kept in ``pivot``.
    """

    def __init__(self, pivot, message=None):
        self.pivot = int(pivot)
        if message is None:
            message = f"Cholesky breakdown at pivot {self.pivot}"
        super().__init__(message)


class ParseError(ValueError):
    """Malformed input file; ``line`` is the 1-based line number or None."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A matrix expected to be positive semidefinite is not.

    ``defect`` holds the magnitude of the most negative eigenvalue
    relative to the largest one.
    """

    def __init__(self, defect, message=None):
        self.defect = float(defect)
        super().__init__(message or f"matrix is not positive semidefinite (relative defect {self.defect:.3e})")
