"""Exception hierarchy shared across the package."""


class MicrocharError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(MicrocharError, ValueError):
    pass


class TooSmall(MicrocharError, ValueError):
    pass


class NoMarkers(MicrocharError, ValueError):
    pass


class NoSamples(MicrocharError, ValueError):
    pass


class InvalidSpec(MicrocharError, ValueError):
    pass


class InvalidDim(MicrocharError, ValueError):
    pass


class LengthMismatch(MicrocharError, ValueError):
    pass


class NotPositiveDefinite(MicrocharError, ArithmeticError):
    pass


class EmptyDataset(MicrocharError, ValueError):
    pass


class NoCheckpoint(MicrocharError, FileNotFoundError):
    """A trained network is required but none was supplied or found."""


# the pipeline reports the same condition under this name
MissingCheckpoint = NoCheckpoint


class UnreadableImage(MicrocharError, OSError):
    pass


class IoError(MicrocharError, OSError):
    pass
