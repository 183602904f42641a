"""Custom exception hierarchy for the cavity trap simulator."""

from typing import Any, Dict, Optional


class CavityTrapError(Exception):
    """Base exception for all simulator errors."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.details = details or {}
        super().__init__(self.message)

    def __reduce__(self):
        # keep details when errors cross process boundaries
        return (self.__class__, (self.message, self.details))

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to dictionary for reports and CLI output."""
        return {
            "error_type": self.__class__.__name__,
            "message": self.message,
            "details": self.details,
        }


class ConfigurationError(CavityTrapError):
    """Raised when a run configuration or scenario preset is invalid."""
    pass


class InvalidArgumentError(CavityTrapError):
    """Raised when an operation receives arguments outside its domain."""
    pass


class NumericalError(CavityTrapError):
    """Raised when a linear solve or integration fails its residual check."""
    pass


class NumericalDegeneracyError(NumericalError):
    """Raised when the Liouvillian kernel is not one-dimensional."""
    pass


class ConsistencyError(CavityTrapError):
    """Raised when a quantity that must be real or nonnegative is not."""
    pass


class GridRangeError(CavityTrapError):
    """Raised when a cache lookup falls outside the tabulated (g, S) grid."""
    pass


class CacheBuildError(CavityTrapError):
    """Raised when a node solve fails while building the coefficient cache."""
    pass


class BlowUpError(CavityTrapError):
    """Raised when a trajectory step produces non-finite values."""
    pass


class EnsembleError(CavityTrapError):
    """Raised when an ensemble run cannot produce a valid result."""
    pass


class FitError(CavityTrapError):
    """Raised when survival statistics cannot be fitted."""
    pass
