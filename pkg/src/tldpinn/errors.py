"""Exception types raised across the package."""


class TLDPINNError(Exception):
    """Base class for all package errors."""


class UnsupportedPrimitive(TLDPINNError):
    pass


class NumericalOverflow(TLDPINNError):
    """A loss, gradient or derivative tower became non-finite."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ShapeError(TLDPINNError, ValueError):
    pass


class OrderError(TLDPINNError, ValueError):
    """A derivative tower is too short for the operator applied to it."""


class UnknownScheme(TLDPINNError, KeyError):
    pass


class UnknownProblem(TLDPINNError, KeyError):
    pass


class OracleDiverged(TLDPINNError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class DegenerateReference(TLDPINNError, ValueError):
    pass


class DomainError(TLDPINNError, ValueError):
    pass


class ConfigError(TLDPINNError, ValueError):
    pass
