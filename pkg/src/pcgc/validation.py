"""Input validation helpers used at public API boundaries."""

import numpy as np

from .errors import DataError, ShapeError


def check_points(points, name="points", allow_empty=True):
    """Coerce *points* to a contiguous float32 (n, 3) array.

    Rejects NaN/Inf coordinates and wrong shapes.
    """
    arr = np.ascontiguousarray(points, dtype=np.float32)
    if arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ShapeError(f"{name} must have shape (n, 3), got {arr.shape}")
    if not allow_empty and arr.shape[0] == 0:
        raise DataError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or Inf coordinates")
    return arr


def check_normals(normals, n_points, tol=1e-6):
    """Coerce normals to float32 (n, 3) and verify unit length."""
    arr = np.ascontiguousarray(normals, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ShapeError(f"normals must have shape (n, 3), got {arr.shape}")
    if arr.shape[0] != n_points:
        raise ShapeError(
            f"normals length {arr.shape[0]} does not match point count {n_points}"
        )
    if not np.all(np.isfinite(arr)):
        raise DataError("normals contain NaN or Inf")
    norms = np.linalg.norm(arr.astype(np.float64), axis=1)
    if arr.shape[0] and np.max(np.abs(norms - 1.0)) > tol:
        raise DataError("normals must have unit Euclidean norm")
    return arr


def check_resolution(r, minimum=2, divisible_by=None, power_of_two=False):
    """Validate a voxel-grid resolution."""
    r = int(r)
    if r < minimum:
        raise DataError(f"resolution must be >= {minimum}, got {r}")
    if divisible_by is not None and r % divisible_by != 0:
        raise DataError(
            f"resolution {r} is not divisible by {divisible_by}; the learned "
            f"codec halves the grid three times and needs r % 8 == 0"
        )
    if power_of_two and (r & (r - 1)) != 0:
        raise DataError(f"resolution {r} is not a power of two")
    return r


def check_positive(value, name):
    if not value > 0:
        raise DataError(f"{name} must be positive, got {value}")
    return value


def check_in_open_interval(value, lo, hi, name):
    if not (lo < value < hi):
        raise DataError(f"{name} must lie in ({lo}, {hi}), got {value}")
    return value
