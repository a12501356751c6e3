class BVSurvError(Exception):
    """Base class for package errors."""


class DataValidationError(BVSurvError, ValueError):
    """Input data or arguments failed validation."""


class NumericalError(BVSurvError, ArithmeticError):
    """A numerical routine could not produce a usable result."""
