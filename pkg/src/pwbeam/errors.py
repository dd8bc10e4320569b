"""Exception classes shared across the toolkit.

The CLI maps these onto distinct exit codes: configuration problems to 2,
file-format and I/O problems to 3, numerical failures to 4.
"""


class PwbeamError(Exception):
    """Base class for toolkit errors."""


class ConfigError(PwbeamError):
    """Invalid, unknown or missing configuration."""


class TensorFormatError(PwbeamError):
    """Malformed tensor container or image file."""


class NumericalError(PwbeamError):
    """A numerical operation failed (singular solve, divergent loss, ...)."""
