"""Exception types shared across the package."""


class HoroforgeError(Exception):
    """Base class for all package errors."""


class DomainError(HoroforgeError, ValueError):
    pass


class DegenerateError(HoroforgeError, ValueError):
    pass


class NumericalError(HoroforgeError, ArithmeticError):
    pass


class GeometryError(HoroforgeError):
    pass


class InvariantViolation(HoroforgeError, AssertionError):
    pass


class PreconditionError(HoroforgeError, ValueError):
    pass


class PoleError(HoroforgeError, ValueError):
    pass


class StepError(NumericalError):
    pass


class LogBranchError(DomainError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ValidationError(HoroforgeError, ValueError):
    """Bad user input (disconnected packing, tau out of range, malformed file)."""


class ResonanceWarning(UserWarning):
    pass
