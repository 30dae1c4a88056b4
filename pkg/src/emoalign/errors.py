"""Exception taxonomy shared across the package.

The CLI maps every exception below to exit code 2; anything else is a bug.
"""


class EmoalignError(Exception):
    """Base class for all package errors."""


class ShapeError(EmoalignError):
    """Operands do not conform (names the op and the offending shapes)."""


class ContractError(EmoalignError):
    """A documented precondition was violated by the caller."""


class DomainError(EmoalignError):
    """Mathematical domain violation (log of non-positive, zero-norm input, ...)."""


class ConfigError(EmoalignError):
    """Bad configuration value or key."""


class DataError(EmoalignError):
    """Missing or unusable data (empty split, absent manifest, ...)."""


class UnsupportedRateError(DataError):
    """Audio sample rate other than the fixed 16 kHz."""


class CheckpointError(EmoalignError):
    """Unreadable, corrupt, or incompatible checkpoint file."""
