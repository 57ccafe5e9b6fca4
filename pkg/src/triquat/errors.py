"""Exception types shared across the toolkit."""


class TriquatError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(TriquatError):
    """An input value violates a documented invariant."""


class GridError(TriquatError):
    """A grid is malformed or too coarse for the requested operation."""


class QuadratureDomainError(TriquatError):
    """A quadrature region (ball, slab, patch) leaves the sampled box."""


class NoDefectError(TriquatError):
    """Raised when a defect direction is requested but no concentration exists."""


class ConfigError(TriquatError):
    """Bad run configuration or unreadable input files."""
