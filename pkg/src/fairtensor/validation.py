"""Input checking shared by the estimator layer."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, EntryBoundsError

__all__ = [
    "check_index_matrix",
    "check_values",
    "infer_dims",
]


def check_index_matrix(X) -> np.ndarray:
    """Coerce X to an (n_samples, n_modes) int64 coordinate matrix."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise ConfigurationError(
            f"expected a 2-d coordinate matrix, got ndim={X.ndim}"
        )
    if X.shape[0] == 0:
        raise ConfigurationError("coordinate matrix has no rows")
    if X.dtype.kind == "f":
        rounded = np.rint(X)
        if not np.all(np.isfinite(X)) or np.any(rounded != X):
            raise ConfigurationError(
                "coordinates must be integers; got non-integral floats"
            )
        X = rounded
    elif X.dtype.kind not in "iu":
        raise ConfigurationError(
            f"coordinates must be integer-valued, got dtype {X.dtype}"
        )
    X = X.astype(np.int64)
    if X.min() < 0:
        raise EntryBoundsError(
            f"coordinates must be non-negative, found {X.min()}"
        )
    return X


def check_values(y, n_samples: int) -> np.ndarray:
    """Coerce y to a finite float64 vector of the expected length."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y) != n_samples:
        raise ConfigurationError(
            f"got {len(y)} values for {n_samples} coordinates"
        )
    if not np.all(np.isfinite(y)):
        raise ConfigurationError("entry values must be finite")
    return y


def infer_dims(X: np.ndarray, dims=None) -> tuple:
    """Mode sizes, either declared (and checked) or max coordinate + 1."""
    seen = X.max(axis=0) + 1
    if dims is None:
        return tuple(int(d) for d in seen)
    dims = tuple(int(d) for d in dims)
    if len(dims) != X.shape[1]:
        raise ConfigurationError(
            f"declared {len(dims)} mode sizes for {X.shape[1]} coordinate "
            "columns"
        )
    if any(s > d for s, d in zip(seen, dims)):
        raise EntryBoundsError(
            f"coordinates exceed declared dims {dims}: max per mode "
            f"{tuple(int(s) - 1 for s in seen)}"
        )
    return dims
