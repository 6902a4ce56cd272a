"""Exception hierarchy.

Two families matter to callers: configuration problems (``ConfigError``,
CLI exit code 2) and numerical failures (``NumericalError``, exit code 3).
``DomainError`` flags arguments outside a function's domain.
"""


class DcsbError(Exception):
    """Base class for all package errors."""


class DomainError(DcsbError, ValueError):
    """Argument outside the domain of a function or a parameter invariant."""


class PoleOfGamma(DomainError):
    """Gamma function evaluated at (or within tolerance of) a pole."""


class ConfigError(DcsbError):
    """Invalid run configuration (file, flags or values)."""


class NumericalError(DcsbError):
    """A numerical procedure failed to meet its contract."""


class QuadratureFailure(NumericalError):
    pass


class RootFindingFailure(NumericalError):
    pass


class DegeneratePole(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class ImaginaryLeak(NumericalError):
    pass


class ContourFailure(NumericalError):
    pass


class StepTooLarge(NumericalError):
    pass


class NoBracket(NumericalError):
    pass


class OracleMismatch(NumericalError):
    pass


class InvariantViolation(NumericalError):
    pass
