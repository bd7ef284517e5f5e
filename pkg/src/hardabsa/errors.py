"""Exception types shared across the package."""


class HardAbsaError(Exception):
    """Base class for all package errors."""


class DimensionError(HardAbsaError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(HardAbsaError, ValueError):
    """A documented precondition of an operation was violated."""


class DataError(HardAbsaError, ValueError):
    """Malformed or inconsistent dataset content."""


class QuotaError(DataError):
    """Not enough source sentences to fill a synthesis quota."""


class ConfigError(HardAbsaError, ValueError):
    """Invalid or unknown configuration value."""


class CheckpointError(HardAbsaError, ValueError):
    """Checkpoint is unreadable, has the wrong version, or does not match."""
