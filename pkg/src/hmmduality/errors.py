"""Exception and warning types raised by hmmduality."""


class HMMDualityError(Exception):
    """Base class for all library errors."""


class ValidationError(HMMDualityError, ValueError):
    """Input data violates a model or vector invariant."""


class ShapeMismatch(ValidationError):
    pass


class GeneratorViolation(ValidationError):
    """Rate matrix has a negative off-diagonal entry or a nonzero row sum."""


class NonFinite(ValidationError):
    pass


class ParseError(HMMDualityError, ValueError):
    """Model file is unreadable or does not match the schema."""


class ConfigError(HMMDualityError, ValueError):
    """Simulation configuration is inconsistent."""


class AbsoluteContinuityViolation(ValidationError):
    """The true prior puts mass where the filter prior has none."""


class SupportViolation(AbsoluteContinuityViolation):
    pass


class MassCollapse(HMMDualityError, FloatingPointError):
    """Unnormalized filter mass underflowed or became non-positive."""


class InconclusiveRank(HMMDualityError):
    """A singular value sits inside the Monte Carlo noise band.

    Attributes
    ----------
    singular_values : ndarray
        Singular values of the estimate, descending.
    band : tuple of float
        ``(lower, upper)`` absolute thresholds of the noise band.
    """

    def __init__(self, message, singular_values=None, band=None):
        super().__init__(message)
        self.singular_values = singular_values
        self.band = band


class NotInRange(HMMDualityError):
    """Target function is not in the range of the gramian."""


class DegenerateLevels(UserWarning):
    """All observation rows collapse into a single level and A = 0."""
