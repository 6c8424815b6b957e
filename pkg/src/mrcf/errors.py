"""Exception types shared across the tracking toolkit."""


class MrcfError(Exception):
    """Base class for all toolkit-specific errors."""


class InvalidTargetError(MrcfError, ValueError):
    """Target box or crop geometry is degenerate (non-positive area, NaN, ...)."""


class ShapeError(MrcfError, ValueError):
    """Operands have incompatible array shapes."""


class FormatError(MrcfError, ValueError):
    """A binary artifact file is malformed (bad magic, version, or truncation)."""


class SingularMatrixError(MrcfError, ArithmeticError):
    """Dense ridge system is singular and cannot be solved."""


class NearSingularError(MrcfError, ArithmeticError):
    """Spectral denominator too close to zero for a stable dual solve."""


class InvalidRateError(MrcfError, ValueError):
    """Interpolation / learning rate outside [0, 1]."""


class NotInitializedError(MrcfError, RuntimeError):
    """Operation requires a trained model or initialized state."""


class EmptyDatasetError(MrcfError, ValueError):
    """Training requires at least one sample."""


class EmptySequenceError(MrcfError, ValueError):
    """A sequence must contain at least one frame."""


class LayoutError(MrcfError, ValueError):
    """Sequence directory does not follow the expected on-disk layout."""


class ParseError(MrcfError, ValueError):
    """A text file failed to parse; carries the 1-based offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line
