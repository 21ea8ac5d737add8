"""Exception types shared across the pipeline."""


class UnsupsegError(Exception):
    """Base class for all package errors."""


class FormatError(UnsupsegError):
    """Raised when a binary container is malformed or violates its invariants."""


class ManifestError(UnsupsegError):
    """Raised when a split manifest cannot be parsed or references missing files."""


class ConfigError(UnsupsegError):
    """Raised for invalid or unknown configuration values."""


class DataError(UnsupsegError):
    """Raised when runtime data violates an operation's preconditions."""
