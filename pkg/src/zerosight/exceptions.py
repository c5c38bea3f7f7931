"""Exception types shared across the package."""


class ZerosightError(Exception):
    """Base class for all package errors."""


class ShapeError(ZerosightError, ValueError):
    """Operand shapes are incompatible.

    ``dim`` names the offending dimension (e.g. ``"channels"`` or ``"axis 1"``).
    """

    def __init__(self, message, dim=None):
        super().__init__(message)
        self.dim = dim


class ConfigurationError(ZerosightError, ValueError):
    """A layer, model or run configuration is invalid."""


class NumericalError(ZerosightError, ArithmeticError):
    """A loss or gradient became non-finite."""
