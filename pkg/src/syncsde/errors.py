"""Exception hierarchy shared by all modules."""


class SyncError(Exception):
    """Base class for every error raised by syncsde."""


class ConfigurationError(SyncError, ValueError):
    """Invalid grid, parameters or experiment configuration."""


class DimensionError(SyncError, ValueError):
    pass


class AlignmentError(SyncError, ValueError):
    """A time value does not fall on a grid node."""


class RangeError(SyncError, ValueError):
    """A time value or window lies outside the available grid."""


class NumericRangeError(SyncError, ArithmeticError):
    """An OU value is large enough that exp(O) risks overflow.

    Paths triggering this are flagged as unusable, never silently clipped.
    """


class UnsupportedStructureError(SyncError, ValueError):
    """Matrix input violates the symmetric / nonnegative off-diagonal contract."""


class ComparisonError(SyncError, ValueError):
    """Two trajectory bundles cannot be compared (grid, frame or shape mismatch)."""
