"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`UltraweakError`. The CLI maps :class:`ConfigError` subclasses to exit
code 2 and :class:`NumericalError` subclasses to exit code 3.
"""


class UltraweakError(Exception):
    """Base class for all package errors."""


class ConfigError(UltraweakError, ValueError):
    """Invalid input: unknown problem, bad geometry, inconsistent options."""


class NumericalError(UltraweakError, ArithmeticError):
    """A numerical procedure failed."""


class MixedSignFace(ConfigError):
    """The normal flux b.n changes sign on a single side of the box."""


class PointOutOfDomain(ConfigError):
    pass


class UnknownProblem(ConfigError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ValidationFailed(ConfigError):
    """Problem data violates a well-posedness check.

    The failed :class:`~ultraweak.problem.ValidationReport` is attached as
    ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InconsistentSpaces(ConfigError):
    pass


class QuadratureOrderTooLow(ConfigError):
    pass


class OrderTooLow(ConfigError):
    pass


class NotNested(ConfigError):
    pass


class NotSPD(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class SingularReducedSystem(NumericalError):
    pass


class BasisDegenerate(NumericalError):
    pass
