"""Frequency-gated peripheral convolution toolkit.

A from-scratch numerical stack for video prediction with pixel-wise
frequency-guided gating over multi-scale separable peripheral convolutions
and learnable center suppression, plus the spectral analysis machinery that
verifies the ring-band-pass and SNR-optimality behavior of such filters.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigParseError,
    ConfigurationError,
    DegeneracyError,
    InputError,
    NumericError,
    PerigateError,
    UnsupportedOperationError,
)
