"""Exception hierarchy shared across the registration engine."""


class PpcRegError(Exception):
    """Base class for all errors raised by this package."""


class PointBehindSource(PpcRegError):
    """A 3D point lies behind (or too close to) the X-ray source."""


class ImageTooSmall(PpcRegError):
    """Image is too small for finite-difference gradients."""


class EmptySurface(PpcRegError):
    """Surface extraction produced no points (degenerate volume)."""


class PrimitiveOutOfBounds(PpcRegError):
    """A phantom primitive extends outside the volume's physical extent."""


class EmptySystem(PpcRegError):
    """No valid correspondence contributed a constraint row."""


class DegenerateWeights(PpcRegError):
    """Every correspondence weight is zero."""


class EmptyPointSet(PpcRegError):
    """A metric was asked to average over zero points."""


class UndefinedReduction(PpcRegError):
    """Reduction factor is undefined when the starting error is zero."""


class BisectionFailed(PpcRegError):
    """Pose-magnitude bisection did not reach the target error."""


class MalformedHeader(PpcRegError):
    """Volume header failed to parse or is missing required fields."""


class DimensionMismatch(PpcRegError):
    """Volume header declares non-positive or inconsistent dimensions."""


class TruncatedPayload(PpcRegError):
    """Volume payload byte length does not match the declared dimensions."""


class ByteOrderMismatch(PpcRegError):
    """Volume payload byte order tag is not the supported little-endian."""
