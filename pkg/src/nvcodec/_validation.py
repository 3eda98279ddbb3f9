"""Input checks for the estimator front end."""

import numpy as np
from sklearn.utils import check_array

from .volume import Volume


def check_volume(X) -> Volume:
    """Accept a :class:`Volume` or a 3D/4D array of samples."""
    if isinstance(X, Volume):
        return X
    arr = np.asarray(X)
    if arr.ndim not in (3, 4):
        raise ValueError(f"expected a 3D or 4D grid of samples, got an array of shape {arr.shape}")
    flat = check_array(arr.reshape(1, -1), dtype=np.float32, ensure_all_finite=True)
    return Volume.from_array(flat.reshape(arr.shape))


def check_coords(X, d: int) -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if X.shape[1] != d:
        raise ValueError(f"X has {X.shape[1]} columns, the model takes {d} coordinates")
    return X


def check_budget(ratio, n_weights):
    if (ratio is None) == (n_weights is None):
        raise ValueError("set exactly one of ratio or n_weights")
    if ratio is not None and not ratio > 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    if n_weights is not None and n_weights < 1:
        raise ValueError(f"n_weights must be positive, got {n_weights}")
