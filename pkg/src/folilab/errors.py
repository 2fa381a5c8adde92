"""Exception hierarchy shared by every folilab module."""


class FolilabError(Exception):
    """Base class for all library errors."""


class DomainError(FolilabError, ValueError):
    """A point lies outside (or too close to the edge of) its chart domain."""

    def __init__(self, message, chart_id=None):
        super().__init__(message)
        self.chart_id = chart_id


class ArgumentError(FolilabError, ValueError):
    """Tensor arguments are inconsistent (base points, verticality, shapes)."""


class DegeneracyError(FolilabError, ArithmeticError):
    """A frame or Gram matrix is rank deficient."""


class ValidationError(FolilabError, ValueError):
    """Model parameters or warping data fail validation."""


class IntegrationError(FolilabError, RuntimeError):
    """An ODE integration could not be continued."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class ModelConsistencyError(FolilabError, RuntimeError):
    """A numerical health check failed badly enough to indicate a broken model."""


class TransportError(IntegrationError):
    """Verticality of a transported field was lost."""

    def __init__(self, message, time=None, last_state=None):
        super().__init__(message, last_state)
        self.time = time


class GroupoidError(FolilabError, ValueError):
    """Holonomy transformations cannot be composed."""


class ConditioningError(FolilabError, ArithmeticError):
    """A transformation is too ill-conditioned to invert."""


class NoKernelError(FolilabError, ArithmeticError):
    """The fatness form is numerically nonsingular."""


class SamplingError(FolilabError, RuntimeError):
    """A Monte Carlo procedure could not collect enough samples."""

    def __init__(self, message, count=0):
        super().__init__(message)
        self.count = count


class ConfigError(FolilabError, ValueError):
    """An experiment configuration is invalid."""
