"""Exception hierarchy shared by all modules."""


class CmlabError(Exception):
    """Base class for errors raised by this package."""


class LengthError(CmlabError, ValueError):
    """Input sequence has the wrong length."""


class ConditioningError(CmlabError, ValueError):
    """A covariance matrix is singular or not positive-definite."""


class InterleaverError(CmlabError, RuntimeError):
    """An s-random interleaver could not be constructed."""


class TableLoadError(CmlabError, OSError):
    """The LDPC address table is missing or corrupt."""


class TraceFormatError(CmlabError, ValueError):
    """A trace file failed validation.

    ``offset`` is the byte offset at which parsing failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SchemeMismatchError(CmlabError, ValueError):
    """A trace was produced by a different scheme than the requested decoder."""


class ConfigError(CmlabError, ValueError):
    """Invalid sweep configuration."""
