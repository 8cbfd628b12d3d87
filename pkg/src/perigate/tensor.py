"""Dense tensor container and separable-kernel type.

Numeric kernels in :mod:`perigate.ops` work on raw ``numpy`` arrays; the
``Tensor`` class is the validated container used at package boundaries
(binary files, checkpoints, CLI payloads).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError

DTYPE_NAMES = {np.dtype(np.float32): "float32", np.dtype(np.float64): "float64"}
MAX_RANK = 5


class Tensor:
    """Row-major dense array, rank 1..5, float32 or float64.

    Invariants checked on construction: supported dtype, rank within range,
    all extents >= 1, and (debug builds only) finite entries.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            raise ConfigurationError(f"unsupported dtype {arr.dtype}; use float32 or float64")
        if not 1 <= arr.ndim <= MAX_RANK:
            raise ConfigurationError(f"rank {arr.ndim} outside supported range 1..{MAX_RANK}")
        if any(d < 1 for d in arr.shape):
            raise ConfigurationError(f"all extents must be >= 1, got {arr.shape}")
        assert np.all(np.isfinite(arr)), "tensor holds non-finite values"
        self.data = np.ascontiguousarray(arr)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> str:
        return DTYPE_NAMES[self.data.dtype]

    @property
    def size(self) -> int:
        return self.data.size

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, dtype={self.dtype})"


@dataclass(frozen=True)
class SepKernel:
    """Separable kernel pair: row kernel ``h`` (1 x k) and column kernel ``v`` (k x 1)."""

    h: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if h.ndim != 1 or v.ndim != 1:
            raise ConfigurationError("separable kernel components must be 1-D")
        if h.shape[0] != v.shape[0]:
            raise ConfigurationError(
                f"row/column kernels must have equal length, got {h.shape[0]} and {v.shape[0]}"
            )
        if h.shape[0] % 2 == 0:
            raise ConfigurationError(f"kernel size must be odd, got {h.shape[0]}")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "v", v)

    @property
    def k(self) -> int:
        return self.h.shape[0]

    def outer(self) -> np.ndarray:
        """Equivalent dense 2-D kernel v (x) h."""
        return np.outer(self.v, self.h)


def check_chw(x: np.ndarray, name: str = "input") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3:
        raise InputError(f"{name} must have shape [C,H,W], got {x.shape}")
    return x
