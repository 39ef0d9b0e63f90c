"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument violates an operation's preconditions."""


class SolverError(ArithmeticError):
    """The fixed-point iteration hit a numerically undefined update."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NumericalError(ArithmeticError):
    """A linear-algebra step failed (singular or ill-posed system)."""


class CubeFormatError(OSError):
    """A cube or label file is malformed.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
