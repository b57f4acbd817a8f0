"""Small input-validation helpers shared by the public functions."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def as_points(x, dim: int | None = None) -> tuple[np.ndarray, bool]:
    """Coerce ``x`` to a float array of shape ``(N, dim)``.

    Parameters
    ----------
    x : array_like
        A single point of shape ``(dim,)`` or a batch ``(N, dim)``.
    dim : int, optional
        Expected spatial dimension.

    Returns
    -------
    points : ndarray of shape (N, dim)
    single : bool
        True when the input was a single point; callers use it to squeeze
        their output.
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ConfigError(f"expected points of shape (N, n), got {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ConfigError(f"expected dimension {dim}, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError("points must be finite")
    return arr, single


def check_positive(value, name: str, strict: bool = True) -> float:
    """Return ``value`` as float, raising ``ConfigError`` unless positive."""
    v = float(value)
    if not np.isfinite(v) or (v <= 0 if strict else v < 0):
        raise ConfigError(f"must be {'positive' if strict else 'non-negative'}, got {value!r}", name)
    return v


def check_resolution(n, name: str = "resolution") -> int:
    """Grid resolutions are odd so that the grid is symmetric about 0."""
    if int(n) != n or n < 9:
        raise ConfigError(f"must be an integer >= 9, got {n!r}", name)
    if int(n) % 2 == 0:
        raise ConfigError(f"must be odd so the grid contains x=0, got {n!r}", name)
    return int(n)


def check_vector(v, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (dim,):
        raise ConfigError(f"expected {dim} components, got {arr.size}", name)
    return arr
