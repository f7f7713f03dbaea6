"""Exception types shared across the package."""


class VigatError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(VigatError, ValueError):
    """An array argument has the wrong shape for the requested operation."""


class ConsistencyError(VigatError, ValueError):
    """A cached trace does not belong to the parameters it was paired with."""


class PackFormatError(VigatError, ValueError):
    """A serialized feature pack or checkpoint cannot be decoded."""


class BadMagicError(PackFormatError):
    """The file does not start with the expected magic bytes."""


class TruncatedError(PackFormatError):
    """The file ends before the declared payload does."""


class CorruptRecordError(PackFormatError):
    """Declared counts or indices disagree with the payload."""


class ChecksumError(PackFormatError):
    """The trailing checksum does not match the payload."""


class NonFiniteError(VigatError, ValueError):
    """A tensor that must be finite contains NaN or infinity."""


class PackValidationError(VigatError, ValueError):
    """A feature pack violates a structural invariant."""


class DatasetError(VigatError, ValueError):
    """A dataset manifest or split cannot be used as requested."""
