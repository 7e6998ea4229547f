"""Exception hierarchy shared across the package."""


class HypalignError(Exception):
    """Base class for all package-specific errors."""


class UsageError(HypalignError):
    """Caller violated a precondition (bad shapes, mismatched curvature, ...)."""


class NumericError(HypalignError):
    """A forward computation produced NaN/Inf, or gradients blew up."""


class SaturationError(NumericError):
    """Argument to the hyperbolic lift exceeded the overflow guard.

    Callers should rescale their features (shrink the modality scale alpha)
    rather than widening the guard.
    """


class FormatError(HypalignError):
    """A serialized artifact (feature file, manifest, checkpoint) is malformed."""


class ConfigError(UsageError):
    """A run configuration contains unknown keys or invalid values."""
