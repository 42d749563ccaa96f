"""Exception types raised across the package."""


class VidStyleError(Exception):
    """Base class for all package errors."""


class ShapeError(VidStyleError, ValueError):
    pass


class FormatError(VidStyleError, ValueError):
    """A file on disk does not follow the expected byte layout."""


class ConfigError(VidStyleError, ValueError):
    """A run configuration violates one of its invariants."""


class BackendError(VidStyleError, RuntimeError):
    """A predictor or codec backend failed or lacks a required capability."""
