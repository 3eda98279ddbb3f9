"""Small analytic volumes for smoke tests and demos."""

import numpy as np

from .volume import Volume, grid_coordinates


def sinusoid_sum(resolution=(32, 32, 32)) -> Volume:
    """Sum of three low-frequency sinusoids over ``[-1, 1]^3``."""
    x, y, z = grid_coordinates(resolution).T
    f = (np.sin(0.5 * np.pi * x + 0.3)
         + 0.8 * np.sin(0.75 * np.pi * y + 1.1)
         + 0.6 * np.sin(0.5 * np.pi * (y + z) + 0.5))
    return Volume.from_array(f.reshape(resolution).astype(np.float32))


def drifting_sinusoids(resolution=(16, 16, 16, 4)) -> Volume:
    """Time-varying field: the spatial pattern drifts along x as t goes from -1 to 1."""
    x, y, z, t = grid_coordinates(resolution).T
    f = (np.sin(np.pi * (x - 0.25 * t) + 0.3)
         + 0.8 * np.sin(np.pi * y + 1.1)
         + 0.6 * np.sin(0.5 * np.pi * (x + z) + 0.5 + 0.5 * t))
    return Volume.from_array(f.reshape(resolution).astype(np.float32))
