"""Exception hierarchy shared by all modules."""


class D2DSpreadError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(D2DSpreadError, ValueError):
    """An input violates a documented precondition."""


class ParseError(ValidationError):
    """A record in an input file could not be parsed.

    ``line`` is the 1-based line number within the source (header is line 1).
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StructuralError(D2DSpreadError):
    """The model structure makes a computation undefined (e.g. a flow with no return)."""

    def __init__(self, message, pair=None):
        self.pair = pair
        super().__init__(message)


class IntegrationError(D2DSpreadError, RuntimeError):
    """Numerical integration or simulation could not continue."""
