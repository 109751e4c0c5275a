"""Exception hierarchy. CLI exit codes key off these classes."""


class MMRecError(Exception):
    exit_code = 1


class ValidationError(MMRecError, ValueError):
    """Bad input shape, range, index or file content."""

    exit_code = 2


class ParseError(ValidationError):
    pass


class DomainError(ValidationError):
    """Input is well-formed but the requested operation is impossible on it."""


class ProtocolError(ValidationError):
    """Evaluation inputs are inconsistent, e.g. a positive missing from its ranked list."""


class NumericalError(MMRecError, ArithmeticError):
    """Non-finite loss or intermediate during training or scoring."""

    exit_code = 3
