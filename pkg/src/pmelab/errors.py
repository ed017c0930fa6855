"""Exception types shared by the laboratory.

Numerical outcomes that are not numbers (a divergent integral, an unbounded
field, a hypothesis that does not hold) are raised as dedicated signals so
callers can record them instead of mistaking them for failures.
"""


class LabError(Exception):
    """Base class for every error raised by the package."""

    anchor = ""


class DomainError(LabError, ValueError):
    """Arguments lie outside the region where a formula is defined."""


class SingularityError(DomainError):
    """Evaluation requested at a pole of a singular solution."""


class DivergenceSignal(LabError):
    """A quadrature did not converge; the integral is treated as infinite."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class UnboundedSignal(LabError):
    """A supremum was requested over a set containing a pole."""


class OverflowSignal(LabError):
    """A bracket search exceeded its ceiling."""


class PreconditionUnmet(LabError):
    """A checker hypothesis failed on the supplied data."""

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}


class NotApplicable(LabError):
    """The requested construction does not exist for these inputs."""


class StepFailure(LabError):
    """The time stepper could not advance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(LabError):
    """A run configuration failed validation."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])
