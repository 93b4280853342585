"""Exception hierarchy shared across the package."""


class GmmPowerError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(GmmPowerError):
    """A numeric argument is outside its valid domain."""


class SpecificationError(GmmPowerError):
    """Model specification and data are inconsistent (unknown covariate,
    unresolvable lag, unbalanced panel, malformed file)."""


class SingularMatrixError(GmmPowerError):
    """A matrix expected to be symmetric positive definite is not.

    ``pivot`` is the index of the Cholesky pivot that failed.
    """

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class NumericFailureError(GmmPowerError):
    """A non-finite value appeared during an iterative computation.

    ``last_iterate`` holds the last finite point reached, when available.
    """

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class EstimationFailureError(GmmPowerError):
    """An estimator failed to converge; ``diagnostics`` carries optimizer state."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class IdentificationError(GmmPowerError):
    """G'S^{-1}G (or a restriction of it) is singular: parameters not identified."""


class InvalidHypothesisError(GmmPowerError):
    """The restriction matrix H is rank deficient or dimensionally inconsistent."""


class DegenerateMomentsError(GmmPowerError):
    """All subject moment vectors vanish; no weighting target exists."""


class ProtocolError(GmmPowerError):
    """Two fits combined in a test statistic were produced under incompatible
    weighting matrices."""


class NonstationaryParameterError(GmmPowerError):
    """Generator parameters imply a non-stationary process."""


class ConfigError(GmmPowerError):
    """Invalid run configuration; ``path`` names the offending key."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.path = path
