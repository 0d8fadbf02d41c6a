"""Exception types shared across the package."""


class BsnnError(Exception):
    """Base class for all package errors."""


class ShapeError(BsnnError, ValueError):
    """An array argument has an incompatible shape."""


class ConfigError(BsnnError, ValueError):
    """A configuration value or file is invalid."""


class StateError(BsnnError, RuntimeError):
    """An operation was called in a state that cannot support it."""


class NumericsError(BsnnError, FloatingPointError):
    """A non-finite value appeared where the computation requires finite data."""


class DataFormatError(BsnnError, ValueError):
    """An on-disk payload does not match its declared format."""


class IdxMagicError(DataFormatError):
    """An IDX file starts with the wrong magic number."""


class IdxTruncatedError(DataFormatError):
    """An IDX file ends before its declared payload."""


class IdxCountMismatchError(DataFormatError):
    """Image and label IDX files declare different record counts."""


class CheckpointError(DataFormatError):
    """A checkpoint file is malformed or incompatible with the given config."""
