"""End-to-end acceptance suite.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line with the measured
numbers, then asserts.  The two smoke trainings (with and without the
gradient penalty) are shared through a module-scoped cache.  Everything runs
with numerical libraries capped at one thread.

Smoke configuration: the 32^3 three-sinusoid volume from
:func:`nvcodec.synthetic.sinusoid_sum`, ``m = C / 50`` (k = 5 over 8
blocks), 75 epochs, batch 256, initial learning rate 1e-2, omega0 = 10,
seed 0.
"""

import itertools
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import ndimage
from threadpoolctl import threadpool_limits

from conftest import richardson_gradient
from nvcodec.codec import deserialize, file_size_bits, reconstruct_volume, serialize
from nvcodec.field_net import (
    NetworkArch,
    derive_layer_width,
    forward,
    hidden_activations,
    init_params,
    input_gradient,
)
from nvcodec.metrics import evaluate_model, psnr
from nvcodec.quantizer import dequantize_model, kmeans_1d, quantize_model
from nvcodec.render import Camera, default_transfer_function, raymarch_grid, raymarch_neural
from nvcodec.synthetic import drifting_sinusoids, sinusoid_sum
from nvcodec.trainer import TrainConfig, loss_and_gradients, train
from nvcodec.volume import SampleBatch, grid_coordinates, save_raw

from test_codec import random_model
from test_quantizer import _brute_force_sse, _sse
from test_trainer import _fd_param_grads, _rel_err

SMOKE_RATIO = 50
SMOKE_OMEGA0 = 10.0
SMOKE_CFG = dict(epochs=75, batch_size=256, lr_initial=1e-2, seed=0)
LAMBDA = 0.05


@pytest.fixture(autouse=True)
def single_thread():
    with threadpool_limits(limits=1):
        yield


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}: {detail}")
    return emit


class _Smoke:
    """Lazily trained smoke models, shared by the criteria that need them."""

    def __init__(self):
        self.volume = sinusoid_sum((32, 32, 32))
        self.k = derive_layer_width(self.volume.size // SMOKE_RATIO, 3, 8)
        self.arch = NetworkArch(3, self.k, 8, SMOKE_OMEGA0)
        self._runs = {}

    def run(self, lam):
        if lam not in self._runs:
            start = time.perf_counter()
            with threadpool_limits(limits=1):
                params, log = train(self.volume, self.arch, TrainConfig(lam=lam, **SMOKE_CFG))
            seconds = time.perf_counter() - start
            qm = self.quantize(params, 9)
            self._runs[lam] = params, qm, seconds
        return self._runs[lam]

    def quantize(self, params, bits):
        v = self.volume
        return quantize_model(params, bits, seed=0, vmin=v.vmin, vmax=v.vmax,
                              omega0=SMOKE_OMEGA0, resolution=v.resolution)

    def unquantized(self, params):
        # 16-bit codes hold every distinct float32 weight of a k=5 layer exactly
        qm = self.quantize(params, 16)
        assert np.array_equal(dequantize_model(qm).M1, params.M1)
        return qm


@pytest.fixture(scope="module")
def smoke():
    return _Smoke()


def test_1_gradient_exactness(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_param, worst_input = 0.0, 0.0
    for trial in range(50):
        k, n = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        params = init_params(NetworkArch(3, k, n), 1000 + trial).astype(np.float64)
        batch = SampleBatch(rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, 4),
                            rng.normal(size=(4, 3)))
        for lam in (0.0, LAMBDA):
            _, grads = loss_and_gradients(params, batch, lam)
            fd = _fd_param_grads(params, lambda p: loss_and_gradients(p, batch, lam)[0])
            for g, f in zip(grads.arrays(), fd.arrays()):
                worst_param = max(worst_param, _rel_err(g, f))
        x = rng.uniform(-1, 1, 3)
        g = input_gradient(params, x)
        fd = richardson_gradient(lambda y: forward(params, y), x)
        big = np.abs(g) > 1e-6
        if big.any():
            worst_input = max(worst_input, float(np.max(np.abs(fd - g)[big] / np.abs(g)[big])))
    seconds = time.perf_counter() - start
    ok = worst_param <= 1e-3 and worst_input <= 1e-4 and seconds < 60
    report(1, ok, f"worst parameter-gradient rel. error {worst_param:.2e} (<= 1e-3), "
                  f"worst input-gradient rel. error {worst_input:.2e} (<= 1e-4), {seconds:.1f} s")
    assert ok


def test_2_residual_boundedness(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    cases = 0
    while cases < 10_000:
        k, n = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        params = init_params(NetworkArch(3, k, n), int(rng.integers(2 ** 31)))
        params = params.map(lambda a: a * rng.uniform(0.1, 30))
        xs = rng.uniform(-10, 10, (100, 3))
        for a in hidden_activations(params, xs):
            worst = max(worst, float(np.abs(a).max()))
        cases += xs.shape[0]
    ok = worst <= 1.0
    report(2, ok, f"max |activation| over {cases} (params, x) pairs = {worst:.6f} (<= 1)")
    assert ok


def test_3_quantization_quality(smoke, report):
    params, qm9, _ = smoke.run(0.0)
    full = psnr(smoke.volume, reconstruct_volume(smoke.unquantized(params)))
    quant = psnr(smoke.volume, reconstruct_volume(qm9))
    drop = full - quant
    low = psnr(smoke.volume, reconstruct_volume(smoke.quantize(params, 3)))

    rng = np.random.default_rng(3)
    monotone = True
    for _ in range(20):
        values = np.concatenate([rng.normal(c, 0.2, 300) for c in rng.uniform(-2, 2, 6)])
        history = []
        kmeans_1d(values, 10, exact_limit=0, history=history)
        monotone &= all(b <= a * (1 + 1e-12) for a, b in zip(history, history[1:]))

    optimal = True
    for size, k in itertools.product(range(2, 9), range(1, 4)):
        for _ in range(30):
            values = np.round(rng.normal(size=size), int(rng.integers(0, 3)))
            centers, _ = kmeans_1d(values, k)
            if len(set(values)) > k:
                optimal &= _sse(values, centers) <= _brute_force_sse(values, k) * (1 + 1e-9) + 1e-12
            else:
                optimal &= _sse(values, centers) == 0.0

    ok = drop <= 3.0 and monotone and optimal
    report(3, ok, f"9-bit drop {drop:.3f} dB ({full:.2f} -> {quant:.2f}; 3-bit gives {low:.2f}), "
                  f"Lloyd objective non-increasing: {monotone}, brute-force optimal: {optimal}")
    assert ok


def test_4_codec_round_trip(report):
    rng = np.random.default_rng(4)
    exact = sized = 0
    for i in range(200):
        bits = (1, 8, 9, 16)[i % 4]
        qm = random_model(rng, int(rng.integers(3, 5)), int(rng.integers(1, 7)),
                          int(rng.integers(1, 4)), bits)
        data = serialize(qm)
        exact += deserialize(data) == qm and serialize(deserialize(data)) == data
        sized += 8 * len(data) == file_size_bits(qm.arch, bits)
    ok = exact == 200 and sized == 200
    report(4, ok, f"{exact}/200 bit-exact round trips, {sized}/200 sizes match the formula")
    assert ok


def test_5_smoke_compression(smoke, report):
    params, qm, seconds = smoke.run(0.0)
    quality = psnr(smoke.volume, reconstruct_volume(qm))
    ok = quality >= 35.0 and seconds <= 15 * 60
    report(5, ok, f"32^3, k={smoke.k}, PSNR {quality:.2f} dB (>= 35), "
                  f"training {seconds:.1f} s single-threaded (<= 900)")
    assert ok


def test_6_gradient_regularization_direction(smoke, report):
    _, plain_qm, _ = smoke.run(0.0)
    _, reg_qm, _ = smoke.run(LAMBDA)
    plain = evaluate_model(plain_qm, smoke.volume, with_net_grad=True)
    reg = evaluate_model(reg_qm, smoke.volume, with_net_grad=True)
    ok = (reg.fd_grad_psnr > plain.fd_grad_psnr and reg.net_grad_psnr > plain.net_grad_psnr
          and reg.psnr >= plain.psnr - 2.0)
    report(6, ok, f"FD-Grad {plain.fd_grad_psnr:.2f} -> {reg.fd_grad_psnr:.2f}, "
                  f"Net-Grad {plain.net_grad_psnr:.2f} -> {reg.net_grad_psnr:.2f}, "
                  f"PSNR {plain.psnr:.2f} -> {reg.psnr:.2f} (may drop <= 2 dB)")
    assert ok


def test_7_interpolant(smoke, report):
    _, qm, _ = smoke.run(0.0)
    coarse = reconstruct_volume(qm)
    fine_res = tuple(2 * s for s in coarse.resolution)
    fine = reconstruct_volume(qm, fine_res)
    # fine-grid coordinates expressed as fractional indices of the coarse grid
    idx = ((grid_coordinates(fine_res) + 1.0) * (np.array(coarse.resolution) - 1) / 2.0).T
    upsampled = ndimage.map_coordinates(coarse.grid.astype(np.float64), idx, order=1)
    rmse = math.sqrt(np.mean((fine.values - upsampled) ** 2))
    span = coarse.vmax - coarse.vmin
    ok = rmse <= 0.05 * span
    report(7, ok, f"2x decode vs trilinear upsampling RMSE {rmse:.4g} = "
                  f"{100 * rmse / span:.3f}% of range (<= 5%)")
    assert ok


def test_8_renderer_oracle(smoke, report):
    _, qm, _ = smoke.run(0.0)
    cam = Camera((2.2, 1.6, 2.6), width=48, height=48)
    tf = default_transfer_function()
    history = []
    neural = raymarch_neural(qm, cam, tf, 0.005, alpha_history=history)
    grid = raymarch_grid(reconstruct_volume(qm), cam, tf, 0.005)
    rmse = math.sqrt(np.mean((neural.pixels.astype(float) - grid.pixels.astype(float)) ** 2))
    alphas = np.array(history)
    monotone = bool(np.all(np.diff(alphas, axis=0) >= 0) and alphas.max() <= 1 + 1e-6)
    ok = rmse <= 2.0 and monotone
    report(8, ok, f"neural vs grid per-pixel RMSE {rmse:.3f}/255 (<= 2/255), "
                  f"alpha monotone and <= 1 on every ray: {monotone}")
    assert ok


def test_9_time_varying(report):
    volume = drifting_sinusoids((16, 16, 16, 4))
    k = derive_layer_width(volume.size // 20, 4, 8)
    arch = NetworkArch(4, k, 8, SMOKE_OMEGA0)
    params, _ = train(volume, arch, TrainConfig(lam=0.0, **SMOKE_CFG))
    qm = quantize_model(params, 9, vmin=volume.vmin, vmax=volume.vmax, omega0=SMOKE_OMEGA0,
                        resolution=volume.resolution)
    decoded = reconstruct_volume(deserialize(serialize(qm))).grid
    scores = [psnr(volume.grid[..., t].ravel(), decoded[..., t].ravel())
              for t in range(volume.resolution[3])]
    ok = all(math.isfinite(s) and s >= 30.0 for s in scores)
    report(9, ok, f"16^3 x 4, k={k}, per-timestep PSNR "
                  f"{', '.join(f'{s:.2f}' for s in scores)} dB (each >= 30)")
    assert ok


def test_10_determinism(tmp_path, report):
    raw = tmp_path / "smoke.raw"
    save_raw(sinusoid_sum((32, 32, 32)), raw)
    outputs = []
    for name in ("a.nvcf", "b.nvcf"):
        cmd = [sys.executable, "-m", "nvcodec", "--threads", "1", "encode", str(raw),
               str(tmp_path / name), "--resolution", "32", "32", "32",
               "--ratio", str(SMOKE_RATIO), "--epochs", "5", "--batch", "256", "--lr", "0.01",
               "--omega0", str(SMOKE_OMEGA0)]
        subprocess.run(cmd, check=True, capture_output=True)
        outputs.append((tmp_path / name).read_bytes())
    ok = outputs[0] == outputs[1]
    report(10, ok, f"two encode runs -> {len(outputs[0])} and {len(outputs[1])} bytes, "
                   f"byte-identical: {ok}")
    assert ok
