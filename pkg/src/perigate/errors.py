"""Exception hierarchy shared by the whole package."""


class PerigateError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PerigateError):
    """Invalid static configuration: bad kernel size, shape mismatch at build time."""


class InputError(PerigateError):
    """Invalid runtime input: incompatible data shapes, bad indices, malformed files."""


class ConfigParseError(InputError):
    """Config file rejected; message carries the offending line number."""


class NumericError(PerigateError):
    """Non-finite values or a failed numerical consistency check."""


class DegeneracyError(PerigateError):
    """Degenerate spectral problem (proportional spectra, vanishing denominator)."""


class UnsupportedOperationError(PerigateError):
    """Operation name outside the supported vocabulary."""
