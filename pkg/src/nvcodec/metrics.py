"""PSNR of reconstructed values and of their gradients."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .codec import reconstruct_volume
from .field_net import input_gradient_batch
from .quantizer import QuantizedModel, dequantize_model
from .volume import Volume, gradient_field, grid_coordinates

PSNR_INF = math.inf


def _psnr(value_range: float, mse: float) -> float:
    if mse == 0:
        return PSNR_INF
    if value_range == 0:
        return -math.inf
    return 10.0 * math.log10(value_range ** 2 / mse)


def psnr(reference, candidate) -> float:
    """``10 log10(range^2 / MSE)`` with the range taken from ``reference``.

    Accepts :class:`Volume` objects or plain arrays.  Identical inputs give
    :data:`PSNR_INF`.
    """
    if isinstance(reference, Volume) and isinstance(candidate, Volume):
        if reference.resolution != candidate.resolution:
            raise ValueError(f"resolution mismatch: {reference.resolution} vs "
                             f"{candidate.resolution}")
    ref = np.asarray(getattr(reference, "values", reference), dtype=np.float64)
    cand = np.asarray(getattr(candidate, "values", candidate), dtype=np.float64)
    if ref.shape != cand.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {cand.shape}")
    mse = float(np.mean((ref - cand) ** 2))
    return _psnr(float(ref.max() - ref.min()), mse)


def gradient_psnr(reference_grads, candidate_grads) -> float:
    """PSNR over all gradient components; the range is the joint min/max of the reference."""
    ref = np.asarray(reference_grads, dtype=np.float64)
    cand = np.asarray(candidate_grads, dtype=np.float64)
    if ref.shape != cand.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {cand.shape}")
    return _psnr(float(ref.max() - ref.min()), float(np.mean((ref - cand) ** 2)))


@dataclass
class MetricReport:
    psnr: float
    fd_grad_psnr: float
    mse: float
    data_range: float
    net_grad_psnr: float | None = None

    def to_json(self) -> str:
        """One line of JSON; infinite PSNRs are written as the string ``"inf"``."""
        def enc(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf" if v > 0 else "-inf"
            return v

        fields = {k: enc(v) for k, v in asdict(self).items() if v is not None}
        return json.dumps(fields)


def network_gradients(qm: QuantizedModel, resolution, chunk: int = 1 << 15) -> np.ndarray:
    """Analytic spatial gradients of the decoded field at every vertex, in value units."""
    params = dequantize_model(qm)
    coords = grid_coordinates(resolution)
    out = np.empty_like(coords)
    for start in range(0, coords.shape[0], chunk):
        out[start:start + chunk] = input_gradient_batch(params, coords[start:start + chunk],
                                                        qm.arch.omega0)
    return out * 0.5 * (qm.vmax - qm.vmin)


def evaluate_model(qm: QuantizedModel, reference: Volume, with_net_grad: bool = False) -> MetricReport:
    if qm.arch.d != reference.dims:
        raise ValueError(f"model is {qm.arch.d}D, reference is {reference.dims}D")
    recon = reconstruct_volume(qm, reference.resolution)
    ref_grads = gradient_field(reference.grid)
    fd_grads = gradient_field(recon.grid)
    diff = recon.values.astype(np.float64) - reference.values
    report = MetricReport(
        psnr=psnr(reference, recon),
        fd_grad_psnr=gradient_psnr(ref_grads, fd_grads),
        mse=float(np.mean(diff ** 2)),
        data_range=reference.vmax - reference.vmin,
    )
    if with_net_grad:
        report.net_grad_psnr = gradient_psnr(ref_grads,
                                             network_gradients(qm, reference.resolution))
    return report
