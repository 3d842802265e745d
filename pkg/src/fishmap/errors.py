"""Exception hierarchy.

Errors are grouped by the CLI exit code they map to: usage/config problems,
data problems, and numerical failures.
"""


class FishmapError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class ConfigError(FishmapError):
    exit_code = 1


class DataError(FishmapError):
    exit_code = 2


class NumericError(FishmapError):
    exit_code = 3


# camera model
class InvalidIntrinsics(ConfigError, ValueError):
    pass


class ZeroVector(DataError, ValueError):
    pass


class OutOfFov(DataError):
    pass


class EmptyOverlap(DataError):
    pass


class NoConvergence(NumericError):
    pass


# calibration
class DegenerateGeometry(NumericError):
    pass


class DegenerateNormals(NumericError):
    pass


class InsufficientData(DataError, ValueError):
    pass


# georeferencing / streams
class EmptyStream(DataError):
    pass


class OutOfRange(DataError):
    pass


class BufferOverflow(DataError):
    pass


# colorization / meshing / texturing
class EmptyImageSet(DataError):
    pass


class OutOfBounds(DataError):
    pass


class BeamCountMismatch(DataError, ValueError):
    pass


class RectTooLarge(DataError):
    pass


class Rejected(DataError):
    """A triangle could not be projected; ``reason`` names why."""

    def __init__(self, reason):
        super().__init__(f"triangle rejected: {reason}")
        self.reason = reason


# simulation / io
class EmptyScene(DataError):
    pass


class DecodeError(DataError):
    def __init__(self, message, path=None, offset=None):
        where = ""
        if path is not None:
            where = f" ({path}" + (f" @ byte {offset}" if offset is not None else "") + ")"
        super().__init__(message + where)
        self.path = path
        self.offset = offset
