"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, ManifestError -> 3,
DomainError / AccumulatorOverflowError -> 4.
"""


class MXIntError(Exception):
    """Base class for all errors raised by mxvit."""


class ConfigError(MXIntError):
    """Invalid configuration value or combination."""


class DomainError(MXIntError):
    """An operand is outside the mathematical domain of an operation."""


class AccumulatorOverflowError(MXIntError):
    """An integer accumulation exceeded the configured accumulator capacity."""


class ManifestError(MXIntError):
    """Missing weight file, malformed manifest, or digest mismatch."""
