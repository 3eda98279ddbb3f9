"""Regular-grid scalar volumes: raw I/O, coordinate mapping, normalization,
random sampling and finite-difference gradients.

Grid index ``i`` along an axis of size ``s`` maps to the coordinate
``-1 + 2 i / (s - 1)`` so every axis spans ``[-1, 1]`` (a singleton axis maps
to 0).  Values are stored flat in row-major order, last index fastest.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError, DegenerateInputError, FormatError

PRECISIONS = {"float32": np.dtype("<f4"), "uint8": np.dtype("u1")}


@dataclass(frozen=True, eq=False)
class Volume:
    """A d-dimensional sampled scalar field (d in {3, 4}).

    Use :meth:`from_array` rather than the constructor; it validates the
    data and fills in the value range.
    """

    resolution: tuple[int, ...]
    values: np.ndarray = field(repr=False)
    vmin: float
    vmax: float

    @classmethod
    def from_array(cls, data, resolution: Sequence[int] | None = None) -> "Volume":
        arr = np.asarray(data, dtype=np.float32)
        if resolution is None:
            resolution = arr.shape
        resolution = tuple(int(s) for s in resolution)
        if len(resolution) not in (3, 4):
            raise ValueError(f"volumes must be 3D or 4D, got {len(resolution)} dims")
        if any(s < 1 for s in resolution):
            raise ValueError(f"resolution entries must be >= 1, got {resolution}")
        flat = np.ascontiguousarray(arr.reshape(-1))
        if flat.size != int(np.prod(resolution)):
            raise FormatError(
                f"expected {int(np.prod(resolution))} values for resolution "
                f"{resolution}, got {flat.size}"
            )
        bad = np.flatnonzero(~np.isfinite(flat))
        if bad.size:
            raise DataError(f"non-finite value at flat index {int(bad[0])}")
        flat.setflags(write=False)
        return cls(resolution, flat, float(flat.min()), float(flat.max()))

    @property
    def dims(self) -> int:
        return len(self.resolution)

    @property
    def size(self) -> int:
        """Number of samples ``C``."""
        return self.values.size

    @property
    def grid(self) -> np.ndarray:
        return self.values.reshape(self.resolution)

    @cached_property
    def normalized(self) -> np.ndarray:
        """Flat float64 values mapped to ``[-1, 1]``."""
        return normalize_values(self)[0]

    @cached_property
    def normalized_gradients(self) -> np.ndarray:
        """``C x d`` central-difference gradients of :attr:`normalized`."""
        return gradient_field(self.normalized.reshape(self.resolution))


class SampleBatch(NamedTuple):
    coords: np.ndarray
    targets: np.ndarray
    grad_targets: np.ndarray | None = None


def load_raw(path, resolution: Sequence[int], precision: str = "float32") -> Volume:
    """Read a headerless little-endian raw file.

    ``uint8`` samples are mapped to floats via ``v / 255``.
    """
    try:
        dtype = PRECISIONS[precision]
    except KeyError:
        raise ValueError(f"unknown precision {precision!r}; use one of {sorted(PRECISIONS)}")
    resolution = tuple(int(s) for s in resolution)
    if any(s < 1 for s in resolution):
        raise ValueError(f"resolution entries must be >= 1, got {resolution}")
    expected = int(np.prod(resolution)) * dtype.itemsize
    actual = os.path.getsize(path)
    if actual != expected:
        raise FormatError(
            f"{path}: file is {actual} bytes, resolution {resolution} at "
            f"{precision} needs {expected}"
        )
    data = np.fromfile(path, dtype=dtype)
    if precision == "uint8":
        data = data.astype(np.float32) / np.float32(255)
    return Volume.from_array(data, resolution)


def save_raw(volume_or_array, path) -> None:
    """Write values as little-endian float32, row-major."""
    values = getattr(volume_or_array, "values", volume_or_array)
    np.asarray(values, dtype="<f4").tofile(path)


def _check_index(idx, resolution):
    idx = tuple(int(i) for i in idx)
    if len(idx) != len(resolution):
        raise IndexError(f"index {idx} has wrong rank for resolution {resolution}")
    for i, s in zip(idx, resolution):
        if not 0 <= i < s:
            raise IndexError(f"index {idx} out of bounds for resolution {resolution}")
    return idx


def grid_to_coord(idx: Sequence[int], resolution: Sequence[int]) -> np.ndarray:
    idx = _check_index(idx, resolution)
    return np.array(
        [0.0 if s == 1 else -1.0 + 2.0 * i / (s - 1) for i, s in zip(idx, resolution)]
    )


def axis_coords(s: int) -> np.ndarray:
    if s == 1:
        return np.zeros(1)
    return -1.0 + 2.0 * np.arange(s) / (s - 1)


def indices_to_coords(indices: np.ndarray, resolution: Sequence[int]) -> np.ndarray:
    """Vectorised :func:`grid_to_coord` for an ``N x d`` integer array."""
    indices = np.asarray(indices)
    out = np.empty(indices.shape, dtype=np.float64)
    for j, s in enumerate(resolution):
        out[:, j] = 0.0 if s == 1 else -1.0 + 2.0 * indices[:, j] / (s - 1)
    return out


def grid_coordinates(resolution: Sequence[int]) -> np.ndarray:
    """Coordinates of every grid vertex, ``C x d``, row-major order."""
    axes = [axis_coords(s) for s in resolution]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def grid_spacing(resolution: Sequence[int]) -> np.ndarray:
    return np.array([2.0 / (s - 1) if s > 1 else 0.0 for s in resolution])


def normalize_values(volume: Volume):
    """Map values to ``[-1, 1]``; returns ``(normalized, vmin, vmax)``."""
    if not volume.vmin < volume.vmax:
        raise DegenerateInputError("constant volume: nothing to learn")
    vmin, vmax = volume.vmin, volume.vmax
    x = volume.values.astype(np.float64)
    return 2.0 * (x - vmin) / (vmax - vmin) - 1.0, vmin, vmax


def denormalize_values(x, vmin: float, vmax: float) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) + 1.0) * 0.5 * (vmax - vmin) + vmin


def central_diff_gradient(grid: np.ndarray, idx: Sequence[int]) -> np.ndarray:
    """Gradient at one vertex by central differences in normalized coordinates.

    Boundaries fall back to one-sided differences; singleton axes give 0.
    ``grid`` may be a :class:`Volume` or an array shaped like the grid.
    """
    if isinstance(grid, Volume):
        grid = grid.grid
    grid = np.asarray(grid, dtype=np.float64)
    idx = _check_index(idx, grid.shape)
    out = np.zeros(grid.ndim)
    for j, s in enumerate(grid.shape):
        if s == 1:
            continue
        h = 2.0 / (s - 1)
        lo = list(idx)
        hi = list(idx)
        if idx[j] == 0:
            hi[j] += 1
            out[j] = (grid[tuple(hi)] - grid[idx]) / h
        elif idx[j] == s - 1:
            lo[j] -= 1
            out[j] = (grid[idx] - grid[tuple(lo)]) / h
        else:
            hi[j] += 1
            lo[j] -= 1
            out[j] = (grid[tuple(hi)] - grid[tuple(lo)]) / (2.0 * h)
    return out


def gradient_field(grid: np.ndarray) -> np.ndarray:
    """Gradients at every vertex, ``C x d``, same stencil as :func:`central_diff_gradient`."""
    grid = np.asarray(grid, dtype=np.float64)
    out = np.zeros((grid.size, grid.ndim))
    for j, s in enumerate(grid.shape):
        if s > 1:
            out[:, j] = np.gradient(grid, 2.0 / (s - 1), axis=j, edge_order=1).reshape(-1)
    return out


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_flat_indices(size: int, n: int, rng) -> np.ndarray:
    return as_generator(rng).integers(0, size, size=n)


def sample_batch(volume: Volume, n: int, rng_seed, with_gradients: bool = False,
                 normalize: bool = True) -> SampleBatch:
    """Draw ``n`` vertices uniformly with replacement.

    ``rng_seed`` may be an int or a :class:`numpy.random.Generator`.  With
    ``normalize=False`` targets are raw values (gradients likewise).
    """
    if n < 1:
        raise ValueError(f"batch size must be >= 1, got {n}")
    flat = sample_flat_indices(volume.size, n, rng_seed)
    return _batch_at(volume, flat, with_gradients, normalize)


def _batch_at(volume, flat, with_gradients, normalize):
    idx = np.stack(np.unravel_index(flat, volume.resolution), axis=1)
    coords = indices_to_coords(idx, volume.resolution)
    if normalize:
        targets = volume.normalized[flat]
        grads = volume.normalized_gradients[flat] if with_gradients else None
    else:
        targets = volume.values[flat].astype(np.float64)
        grads = gradient_field(volume.grid)[flat] if with_gradients else None
    return SampleBatch(coords, targets, grads)
