"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid boundary or calibration parameters."""


class DomainError(ValueError):
    """An argument lies outside the domain of a formula."""


class InfeasibleError(RuntimeError):
    """A search (e.g. for m*) hit its cap without finding a solution."""


class EmptyStateError(RuntimeError):
    """A query needs at least one calibration sample."""


class BandUndefinedError(ValueError):
    """The tightness band is requested before the informative regime starts."""


class CheckpointError(RuntimeError):
    """A serialized state cannot be restored (version or config mismatch)."""
