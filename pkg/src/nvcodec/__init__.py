"""Lossy compression of volumetric scalar fields with quantized sinusoidal networks."""

from .codec import compression_ratio, deserialize, reconstruct_volume, serialize
from .errors import (BudgetError, ConfigurationError, DataError, DegenerateInputError,
                     DivergenceError, FormatError, NVCodecError)
from .estimator import NeuralVolumeCompressor
from .field_net import NetworkArch, Parameters, derive_layer_width, forward, forward_batch, \
    init_params, input_gradient, param_count
from .metrics import MetricReport, evaluate_model, gradient_psnr, psnr
from .quantizer import QuantizedLayer, QuantizedModel, dequantize_model, quantize_model
from .trainer import TrainConfig, TrainLog, train
from .volume import Volume, load_raw, save_raw

__version__ = "0.1.0"
