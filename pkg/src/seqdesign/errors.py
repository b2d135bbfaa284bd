"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SeqDesignError(Exception):
    """Base class for all package errors."""


class ConfigError(SeqDesignError):
    """Invalid configuration input (grid, kernel, filters, templates, spec files)."""


class TemplateCsvError(ConfigError):
    """Malformed template CSV; carries row/column diagnostics."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)


class FilterCoverageError(SeqDesignError):
    """A filter interval contains no grid points or lies outside the grid span."""


class CholeskyError(SeqDesignError):
    """Cholesky factorization failed even after jitter escalation."""


class GSeriesError(SeqDesignError):
    """Series evaluation of the softplus Gaussian moments did not converge."""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(message)


class PolnaError(SeqDesignError):
    """Log-normal sum recursion produced an invalid state (correlation out of range)."""


class LambertError(SeqDesignError):
    """Fixed-point Newton solve for the matrix Lambert W did not converge."""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(message)


class PmfError(SeqDesignError):
    """Probability mass evaluation failed (non-positive determinant, bad inputs)."""


class DegenerateParticlesError(SeqDesignError):
    """All particle likelihoods underflowed; the weight update is undefined."""


class DesignError(SeqDesignError):
    """Filter scoring or selection failed for every candidate."""


class SessionStateError(SeqDesignError):
    """Operation applied to a session in the wrong state."""

    def __init__(self, message: str, status: str | None = None):
        self.status = status
        super().__init__(message)


class SessionNotFoundError(SeqDesignError):
    """Unknown session id."""
