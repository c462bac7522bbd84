"""Exception types shared across the package."""


class LsvError(Exception):
    """Base class for all package-specific errors."""


class ModelConfigError(LsvError, ValueError):
    """Raised when a model configuration is malformed or out of range."""


class GeodesicError(LsvError, RuntimeError):
    """Raised when a geodesic solve fails (bracket, shooting, or quadrature)."""


class NumericalError(LsvError, RuntimeError):
    """Raised when a numerical routine produces an invalid result (NaN paths,
    non-positive Jacobi field, quadrature non-convergence)."""
