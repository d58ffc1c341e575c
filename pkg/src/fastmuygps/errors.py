"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class NumericalError(ArithmeticError):
    """A factorization failed even after diagonal jitter escalation."""

    def __init__(self, message, *, jitter=None, row=None):
        super().__init__(message)
        self.jitter = jitter
        self.row = row


class ModelFormatError(ValueError):
    """A model file is corrupt, truncated or otherwise unreadable."""

    def __init__(self, message, *, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionMismatchError(ModelFormatError):
    pass
