"""Exception hierarchy shared by every module in the package."""


class DcrnnError(Exception):
    """Base class for all package errors."""


class DimensionError(DcrnnError, ValueError):
    pass


class ConvergenceError(DcrnnError, ArithmeticError):
    pass


class DegeneracyError(DcrnnError, ArithmeticError):
    """Raised when an eigenvalue is (nearly) repeated and its derivative is undefined."""


class DivergenceError(DcrnnError, ArithmeticError):
    """A state became non-finite; ``step`` holds the offending index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StructuralError(DcrnnError, ValueError):
    """Parameters and tape (or data) do not belong together."""


class NotApplicableError(DcrnnError, ValueError):
    pass


class FormatError(DcrnnError, ValueError):
    """Malformed binary file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersionError(FormatError):
    pass


class ConfigError(DcrnnError, ValueError):
    """Invalid experiment configuration; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ExperimentError(DcrnnError, RuntimeError):
    pass
