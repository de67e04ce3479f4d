"""Exception types shared across the package."""


class CapallocError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveSemiDefinite(CapallocError):
    """An autocovariance sequence fails the PSD Toeplitz test."""


class UnstableAR(CapallocError):
    """An AR characteristic root lies on or outside the unit circle."""


class SingularCovariance(CapallocError):
    """Covariance matrix is numerically singular."""


class ShapeMismatch(CapallocError):
    """Array dimensions are inconsistent with the declared structure."""


class StationarityViolated(CapallocError):
    """Parameters passed to a capacity routine are not a stationary point."""


class DegenerateJacobian(CapallocError):
    """All Gram-matrix eigenvalues fall below the rank threshold."""


class InvalidPartition(CapallocError):
    """A parameter grouping does not partition the parameter vector."""


class InsufficientFits(CapallocError):
    """Error-bound analysis needs at least two independent fits."""


class RankDeficientFeatures(CapallocError):
    """Feature second-moment matrix is numerically rank deficient."""


class ConfigError(CapallocError):
    """Experiment configuration is missing or malformed."""


class IncompatibleConfigs(CapallocError):
    """Two configs cannot be compared (process or receptive field differ)."""


class ConvergenceWarning(UserWarning):
    """No optimizer restart reached the gradient tolerance."""
