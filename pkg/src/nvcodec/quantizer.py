"""Per-layer k-means weight quantization.

Only the ``k x k`` block matrices are quantized.  The first and last weight
matrices and every bias vector are kept at full precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .field_net import NetworkArch, Parameters

DEFAULT_BITS = 9
MAX_ITERS = 50
EXACT_LIMIT = 256


def _assign(values: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Nearest-center index for each value; ``centers`` must be sorted."""
    mids = 0.5 * (centers[1:] + centers[:-1])
    return np.searchsorted(mids, values, side="left")


def _objective(values, centers, labels) -> float:
    return float(np.sum((values - centers[labels]) ** 2))


def _exact_1d(distinct: np.ndarray, counts: np.ndarray, k: int) -> np.ndarray:
    """Globally optimal centers by dynamic programming over sorted distinct values."""
    m = distinct.size
    w = np.concatenate([[0.0], np.cumsum(counts)])
    s1 = np.concatenate([[0.0], np.cumsum(counts * distinct)])
    s2 = np.concatenate([[0.0], np.cumsum(counts * distinct ** 2)])
    i, j = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    with np.errstate(divide="ignore", invalid="ignore"):
        n = w[j] - w[i]
        cost = s2[j] - s2[i] - (s1[j] - s1[i]) ** 2 / n
    cost = np.where(j > i, np.maximum(cost, 0.0), np.inf)  # cost[i, j]: segment [i, j)
    best = cost[0].copy()
    splits = []
    for _ in range(1, k):
        total = best[:, None] + cost
        arg = np.argmin(total, axis=0)
        splits.append(arg)
        best = total[arg, np.arange(m + 1)]
    bounds = [m]
    for arg in reversed(splits):
        bounds.append(int(arg[bounds[-1]]))
    bounds.append(0)
    bounds = bounds[::-1]
    return np.array([(s1[b] - s1[a]) / (w[b] - w[a]) for a, b in zip(bounds[:-1], bounds[1:])])


def kmeans_1d(values, k: int, iters: int = MAX_ITERS, seed=None, history: list | None = None,
              max_samples: int = 1 << 20, exact_limit: int = EXACT_LIMIT):
    """Cluster scalars into ``k`` groups minimizing the within-cluster sum of squares.

    Large inputs use Lloyd's algorithm, run twice: once with centre ``j``
    at the ``(j + 0.5) / k`` quantile and once from ``k`` evenly spaced
    levels, keeping the lower objective.  The second start guarantees the
    result is never worse than a uniform quantizer; the first is usually
    better on peaked distributions.  Clusters that empty out are moved onto
    the value currently farthest from its centre.  When there are at most
    ``exact_limit`` distinct values the optimum is found exactly by dynamic
    programming instead (Lloyd's can stall in a local minimum).  With no
    more distinct values than clusters the distinct values themselves are
    returned, padded by repeating the largest, for zero error.

    Parameters
    ----------
    values : array_like
        Scalars to cluster.
    k : int
        Number of clusters.
    iters : int
        Maximum Lloyd iterations.
    seed : int or Generator, optional
        Only used to subsample when there are more than ``max_samples``
        values; the fit is otherwise deterministic.
    history : list, optional
        If given, the sum-of-squares objective after each assignment step of
        the winning run is appended to it.
    exact_limit : int
        Largest number of distinct values solved exactly; 0 forces Lloyd's.

    Returns
    -------
    centers : ndarray, sorted ascending, shape (k,)
    labels : ndarray of int, index into ``centers`` for every value
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot cluster an empty array")
    if k < 1:
        raise ValueError(f"need at least one cluster, got {k}")
    distinct, counts = np.unique(x, return_counts=True)
    if distinct.size <= k:
        centers = np.concatenate([distinct, np.full(k - distinct.size, distinct[-1])])
        labels = np.searchsorted(distinct, x)
        if history is not None:
            history.append(0.0)
        return centers, labels
    if distinct.size <= exact_limit:
        centers = _exact_1d(distinct, counts.astype(np.float64), k)
        labels = _assign(x, centers)
        if history is not None:
            history.append(_objective(x, centers, labels))
        return centers, labels

    fit = x
    if x.size > max_samples:
        fit = np.random.default_rng(seed).choice(x, size=max_samples, replace=False)
    best = None
    for init in (np.quantile(fit, (np.arange(k) + 0.5) / k), np.linspace(fit.min(), fit.max(), k)):
        trace = []
        centers, labels = _lloyd(fit, init, iters, trace)
        if best is None or trace[-1] < best[2][-1]:
            best = centers, labels, trace
    if history is not None:
        history.extend(best[2])
    return best[0], _assign(x, best[0])


def _lloyd(fit, centers, iters, history):
    k = centers.size
    labels = None
    for _ in range(iters):
        new = _assign(fit, centers)
        history.append(_objective(fit, centers, new))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        sums = np.bincount(labels, weights=fit, minlength=k)
        updated = np.where(counts > 0, sums / np.maximum(counts, 1), centers)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            err = np.abs(fit - updated[labels])
            for j in empty:
                far = int(np.argmax(err))
                if err[far] == 0:
                    break
                updated[j] = fit[far]
                err[far] = 0.0
        order = np.argsort(updated, kind="stable")
        centers = updated[order]
        labels = np.argsort(order)[labels]
    labels = _assign(fit, centers)
    history.append(_objective(fit, centers, labels))
    return centers, labels


@dataclass(eq=False)
class QuantizedLayer:
    centers: np.ndarray  # float32, (2**bits,), ascending
    codes: np.ndarray    # uint16, rows * cols entries, row-major
    rows: int
    cols: int

    @property
    def bits(self) -> int:
        return int(self.centers.size).bit_length() - 1

    def dequantize(self) -> np.ndarray:
        if self.codes.size != self.rows * self.cols:
            raise FormatError(f"layer holds {self.codes.size} codes, expected {self.rows * self.cols}")
        if self.codes.size and int(self.codes.max()) >= self.centers.size:
            raise FormatError(f"code {int(self.codes.max())} out of range for "
                              f"{self.centers.size} centers")
        return self.centers[self.codes].reshape(self.rows, self.cols)

    def __eq__(self, other):
        return (isinstance(other, QuantizedLayer) and self.rows == other.rows
                and self.cols == other.cols
                and np.array_equal(self.centers.view(np.uint32), other.centers.view(np.uint32))
                and np.array_equal(self.codes, other.codes))


@dataclass(eq=False)
class QuantizedModel:
    arch: NetworkArch
    bits: int
    W_first: np.ndarray
    b_first: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    W_last: np.ndarray
    b_last: np.ndarray
    layers: list[QuantizedLayer]  # M1_0, M2_0, M1_1, M2_1, ...
    vmin: float
    vmax: float
    resolution: tuple[int, ...] = ()

    def __post_init__(self):
        self.resolution = tuple(int(r) for r in self.resolution)
        if self.resolution and len(self.resolution) != self.arch.d:
            raise ValueError(f"resolution {self.resolution} does not match d={self.arch.d}")
        if not 1 <= self.bits <= 16:
            raise ValueError(f"bits must lie in [1, 16], got {self.bits}")
        if len(self.layers) != 2 * self.arch.n_blocks:
            raise ValueError(f"expected {2 * self.arch.n_blocks} quantized layers, "
                             f"got {len(self.layers)}")

    def full_precision(self) -> list[np.ndarray]:
        """Unquantized tensors in file order."""
        return [self.W_first, self.b_first, self.b1, self.b2, self.W_last, self.b_last]

    def __eq__(self, other):
        if not isinstance(other, QuantizedModel):
            return NotImplemented
        same_f32 = all(
            a.shape == b.shape and np.array_equal(np.asarray(a, np.float32).view(np.uint32),
                                                  np.asarray(b, np.float32).view(np.uint32))
            for a, b in zip(self.full_precision(), other.full_precision())
        )
        return (self.arch == other.arch and self.bits == other.bits and same_f32
                and self.layers == other.layers and self.resolution == other.resolution
                and np.float32(self.vmin) == np.float32(other.vmin)
                and np.float32(self.vmax) == np.float32(other.vmax))


def quantize_layer(matrix, bits: int = DEFAULT_BITS, seed=0) -> QuantizedLayer:
    if not 1 <= bits <= 16:
        raise ValueError(f"bits must lie in [1, 16], got {bits}")
    matrix = np.asarray(matrix, dtype=np.float32)
    rows, cols = matrix.shape
    centers, labels = kmeans_1d(matrix, 1 << bits, seed=seed)
    # rounding to float32 is monotone, so the centers stay sorted
    return QuantizedLayer(centers.astype(np.float32), labels.astype(np.uint16), rows, cols)


def quantize_model(params: Parameters, bits: int = DEFAULT_BITS, seed=0, vmin: float = -1.0,
                   vmax: float = 1.0, omega0: float | None = None,
                   resolution=()) -> QuantizedModel:
    """Quantize every block matrix independently; copy everything else.

    ``vmin``/``vmax`` and ``resolution`` describe the source volume and are
    carried along for decoding.
    """
    d, k, n = params.arch_shape
    arch = NetworkArch(d, k, n) if omega0 is None else NetworkArch(d, k, n, omega0)
    p = params.astype(np.float32)
    seeds = np.random.SeedSequence(seed).spawn(2 * n)
    layers = []
    for i in range(n):
        layers.append(quantize_layer(p.M1[i], bits, seeds[2 * i]))
        layers.append(quantize_layer(p.M2[i], bits, seeds[2 * i + 1]))
    return QuantizedModel(arch, bits, p.W_first, p.b_first, p.b1, p.b2, p.W_last, p.b_last,
                          layers, float(vmin), float(vmax), resolution)


def dequantize_model(qm: QuantizedModel) -> Parameters:
    mats = [layer.dequantize() for layer in qm.layers]
    return Parameters(
        W_first=np.asarray(qm.W_first, np.float32).copy(),
        b_first=np.asarray(qm.b_first, np.float32).copy(),
        M1=np.stack(mats[0::2]),
        b1=np.asarray(qm.b1, np.float32).copy(),
        M2=np.stack(mats[1::2]),
        b2=np.asarray(qm.b2, np.float32).copy(),
        W_last=np.asarray(qm.W_last, np.float32).copy(),
        b_last=np.asarray(qm.b_last, np.float32).copy(),
    )
