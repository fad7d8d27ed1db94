"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: config errors -> 2, data errors -> 3,
numeric failures -> 4.
"""


class SocialRefError(Exception):
    pass


class ConfigError(SocialRefError, ValueError):
    pass


class DataError(SocialRefError):
    """Corrupt or inconsistent input data (files, sessions, alignment)."""


class AlignmentError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class WindowOverflowError(DataError):
    pass


class CheckpointIncompatibleError(DataError):
    pass


class ContractViolation(SocialRefError, ValueError):
    pass


class DimensionError(SocialRefError, ValueError):
    pass


class NumericError(SocialRefError, ArithmeticError):
    pass
