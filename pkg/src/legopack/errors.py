"""Exception types shared across the toolkit."""


class LegopackError(Exception):
    """Base class for all toolkit errors."""


class FormatError(LegopackError):
    """A container file violates its binary format."""


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class ChecksumMismatch(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class TrailingGarbage(FormatError):
    """Well-formed content followed by extra bytes."""


class IoFailure(LegopackError):
    """An OS-level read/write failure, wrapping the original OSError."""


class ValidationError(LegopackError):
    """An in-memory object violates one of its invariants."""


class UnsupportedRank(ValidationError):
    pass


class CountMismatch(ValidationError):
    pass


class TooFewBlocks(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class IndexOverflow(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class SkippedLayerWarning(UserWarning):
    """A weight layer was left uncompressed because b does not divide it."""
