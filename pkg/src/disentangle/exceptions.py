"""Exception hierarchy shared by all modules."""


class DisentangleError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(DisentangleError, ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(DisentangleError, ValueError):
    """A softmax row has every position masked."""


class NumericError(DisentangleError, FloatingPointError):
    """A forward value became NaN or infinite."""


class StaleGraphError(DisentangleError, RuntimeError):
    """``backward`` was called twice on the same graph."""


class ParseError(DisentangleError, ValueError):
    """Malformed corpus input. Carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(DisentangleError, ValueError):
    """Invalid or infeasible configuration."""


class InputError(DisentangleError, ValueError):
    """Inputs disagree with each other (unknown ids, coverage mismatch)."""


class CheckpointError(DisentangleError, ValueError):
    """A checkpoint does not match the expected configuration or shapes."""
