"""Exception hierarchy shared across the package."""


class Brain2CapError(Exception):
    pass


class ShapeError(Brain2CapError, ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(Brain2CapError, ValueError):
    """A NaN or Inf reached a public operation."""


class DataError(Brain2CapError, ValueError):
    """Malformed or inconsistent on-disk data."""


class FormatError(DataError):
    """A binary file could not be parsed; ``offset`` is the failing byte position."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ChecksumError(DataError):
    pass


class VersionError(DataError):
    pass


class KindError(DataError):
    pass


class DivergenceError(Brain2CapError, FloatingPointError):
    """Training produced a non-finite loss."""
