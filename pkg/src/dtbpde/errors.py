"""Exception and warning types raised across the package."""


class DTBError(Exception):
    """Base class for all package errors."""


class NonFiniteError(DTBError, ValueError):
    pass


class EmptySystemError(DTBError, ValueError):
    pass


class NotSymmetricError(DTBError, ValueError):
    pass


class NotPositiveSemidefiniteError(DTBError, ValueError):
    pass


class PrecisionError(DTBError, TypeError):
    """Raised for inputs that are not 64-bit floating point."""


class DimensionMismatch(DTBError, ValueError):
    pass


class IndexOutOfRange(DTBError, IndexError):
    pass


class NonSmoothActivation(DTBError, ValueError):
    pass


class BadSize(DTBError, ValueError):
    pass


class ProjectionFailure(DTBError, RuntimeError):
    """The tangent-space fit stayed above tolerance after all retries."""


class StepFailure(DTBError, RuntimeError):
    pass


class ConfigError(DTBError, ValueError):
    pass


class AliasingWarning(UserWarning):
    pass


class RefitWarning(UserWarning):
    pass
