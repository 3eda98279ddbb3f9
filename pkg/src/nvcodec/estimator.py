"""scikit-learn style front end: ``fit`` encodes a volume, ``predict`` decodes."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import codec
from ._validation import check_budget, check_coords, check_volume
from .field_net import DEFAULT_BLOCKS, DEFAULT_OMEGA0, NetworkArch, derive_layer_width, param_count
from .metrics import psnr
from .quantizer import DEFAULT_BITS, quantize_model
from .trainer import TrainConfig, train


class NeuralVolumeCompressor(BaseEstimator):
    """Compress a scalar volume into a quantized sinusoidal network.

    Parameters
    ----------
    ratio : float, optional
        Target ``C / m``: the weight budget is ``m = C // ratio``.
    n_weights : int, optional
        Explicit weight budget.  Exactly one of ``ratio`` and ``n_weights``
        must be given.
    n_blocks : int, default=8
        Residual blocks; each holds two ``k x k`` layers.
    omega0 : float, default=30
        Frequency scale of the first layer.
    lam : float, default=0
        Weight of the input-gradient penalty (0.05 is a good choice when
        gradients matter).
    bits : int, default=9
        Bits per quantized weight.
    epochs, batch_size, lr, seed
        Training schedule; ``lr="auto"`` scales with the parameter count.
    source_bits : int, default=32
        Bits per sample of the source data, for the reported ratio.

    Attributes
    ----------
    model_ : QuantizedModel
    params_ : Parameters
        Unquantized trained weights.
    train_log_ : TrainLog
    n_weights_ : int
        Actual parameter count.
    compression_ratio_ : float
        Source bits over encoded file bits.
    """

    def __init__(self, ratio=None, n_weights=None, n_blocks=DEFAULT_BLOCKS, omega0=DEFAULT_OMEGA0,
                 lam=0.0, bits=DEFAULT_BITS, epochs=75, batch_size=16384, lr="auto", seed=0,
                 source_bits=32):
        self.ratio = ratio
        self.n_weights = n_weights
        self.n_blocks = n_blocks
        self.omega0 = omega0
        self.lam = lam
        self.bits = bits
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.source_bits = source_bits

    def _budget(self, size: int) -> int:
        check_budget(self.ratio, self.n_weights)
        return int(self.n_weights) if self.n_weights is not None else int(size // self.ratio)

    def fit(self, X, y=None):
        volume = check_volume(X)
        budget = self._budget(volume.size)
        k = derive_layer_width(budget, volume.dims, self.n_blocks)
        arch = NetworkArch(volume.dims, k, self.n_blocks, float(self.omega0))
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lam=self.lam,
                          lr_initial=self.lr, seed=self.seed)
        self.params_, self.train_log_ = train(volume, arch, cfg)
        self.model_ = quantize_model(self.params_, self.bits, seed=self.seed, vmin=volume.vmin,
                                     vmax=volume.vmax, omega0=arch.omega0,
                                     resolution=volume.resolution)
        self.n_weights_ = param_count(arch)
        self.compression_ratio_ = volume.size * self.source_bits / codec.file_size_bits(arch, self.bits)
        return self

    def predict(self, X) -> np.ndarray:
        """Decoded values at the ``N x d`` coordinates ``X`` (each in ``[-1, 1]``)."""
        check_is_fitted(self, "model_")
        return codec.evaluate(self.model_, check_coords(X, self.model_.arch.d))

    def reconstruct(self, resolution=None):
        """Decode onto a full grid; defaults to the training resolution."""
        check_is_fitted(self, "model_")
        return codec.reconstruct_volume(self.model_, resolution)

    def score(self, X, y=None) -> float:
        """PSNR of the decoded grid against ``X``."""
        reference = check_volume(X)
        return psnr(reference, self.reconstruct(reference.resolution))

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "model_")
        return codec.serialize(self.model_)

    @classmethod
    def from_bytes(cls, data: bytes) -> "NeuralVolumeCompressor":
        """Rebuild a decoder from an encoded file; training attributes stay unset."""
        qm = codec.deserialize(data)
        est = cls(n_blocks=qm.arch.n_blocks, omega0=qm.arch.omega0, bits=qm.bits)
        est.model_ = qm
        return est
