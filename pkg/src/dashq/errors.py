"""Exception hierarchy shared by the toolkit and mapped to CLI exit codes."""


class DashQError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ValidationError(DashQError, ValueError):
    """Malformed input: bad shapes, out-of-range codes, broken containers."""

    exit_code = 2


class FormatError(ValidationError):
    """A bundle stream does not follow the container layout."""


class NumericalError(DashQError, ArithmeticError):
    """A numerical procedure cannot proceed (singular matrix, zero denominator)."""

    exit_code = 3


class ZeroImportanceError(NumericalError):
    """All importance weights in a group are zero."""


class ZeroDenominatorError(NumericalError):
    """Var_h(Q) + ridge is zero, so the scale regression is undefined."""
