"""Exception types shared across the package."""


class MaskParseError(ValueError):
    """A mask file is malformed; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmptyDomainError(ValueError):
    """The mask contains no interior nodes."""


class NumericalError(RuntimeError):
    """A factorization or iterative solve failed beyond recovery."""


class EigenSolveError(NumericalError):
    """The eigensolver did not reach the requested residual tolerance."""

    def __init__(self, message, worst_residual=None):
        super().__init__(message)
        self.worst_residual = worst_residual
