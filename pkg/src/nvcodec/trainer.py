"""Fitting a network to a volume with Adam and a step-decay schedule."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .field_net import DEFAULT_OMEGA0, NetworkArch, Parameters, Trace, forward_batch, init_params
from .volume import SampleBatch, Volume, gradient_field, grid_coordinates

logger = logging.getLogger(__name__)

LR_SMALL_NET = (800_000, 1e-4)
LR_LARGE_NET = (5_000_000, 2e-5)


@dataclass
class TrainConfig:
    epochs: int = 75
    batch_size: int = 16384
    lam: float = 0.05
    lr_initial: float | str = "auto"
    decay_factor: float = 5.0
    decay_every: int = 20
    seed: int = 0
    normalize: bool = True
    probe_size: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if self.lr_initial != "auto" and not float(self.lr_initial) > 0:
            raise ConfigurationError(f"lr_initial must be positive or 'auto', got {self.lr_initial}")


@dataclass
class AdamState:
    m: Parameters
    v: Parameters
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: Parameters) -> "AdamState":
        zeros = params.zeros_like()
        return cls(zeros, zeros.zeros_like())


class EpochRecord(NamedTuple):
    epoch: int
    lr: float
    loss: float
    psnr: float | None
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "lr", "loss", "psnr", "seconds"])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.lr), repr(r.loss),
                                 "" if r.psnr is None else repr(r.psnr), f"{r.seconds:.6f}"])


def auto_learning_rate(m: int) -> float:
    """Learning rate linear in the parameter count between the two anchors, clamped."""
    (m0, lr0), (m1, lr1) = LR_SMALL_NET, LR_LARGE_NET
    if m <= m0:
        return lr0
    if m >= m1:
        return lr1
    return lr0 + (lr1 - lr0) * (m - m0) / (m1 - m0)


def lr_at_epoch(lr0: float, epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return lr0 / cfg.decay_factor ** (epoch // cfg.decay_every)


def loss_and_gradients(params: Parameters, batch: SampleBatch, lam: float,
                       omega0: float = DEFAULT_OMEGA0):
    """Mean squared error plus ``lam`` times the squared input-gradient error.

    Returns ``(loss, grads)`` with ``grads`` shaped like ``params``.  The
    gradient penalty is differentiated exactly: input gradients are carried
    forward as tangents and the whole pass is then reversed.
    """
    if lam > 0 and batch.grad_targets is None:
        raise ConfigurationError("lambda > 0 requires gradient targets in the batch")
    xs = np.asarray(batch.coords, dtype=np.float64)
    n = xs.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    with_grad = lam > 0
    trace = Trace(params, xs, omega0, tangents=with_grad)
    resid = trace.out - batch.targets
    loss = np.mean(resid ** 2)
    d_grad = None
    if with_grad:
        gresid = trace.grad - batch.grad_targets
        loss = loss + lam * np.mean(np.sum(gresid ** 2, axis=1))
        d_grad = (2.0 * lam / n) * gresid
    grads = trace.backward((2.0 / n) * resid, d_grad)
    return float(loss), grads


def adam_step(params: Parameters, grads: Parameters, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns ``(params, state)`` without mutating inputs."""
    for p, g in zip(params.arrays(), grads.arrays()):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    m = state.m.map(lambda m_, g: b1 * m_ + (1 - b1) * g, grads)
    v = state.v.map(lambda v_, g: b2 * v_ + (1 - b2) * g * g, grads)
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    new = params.map(lambda p, m_, v_: p - lr * (m_ / c1) / (np.sqrt(v_ / c2) + state.eps), m, v)
    return new, AdamState(m, v, t, b1, b2, state.eps)


def _targets(volume: Volume, cfg: TrainConfig):
    if cfg.normalize:
        values = volume.normalized
        grads = volume.normalized_gradients if cfg.lam > 0 else None
    else:
        values = volume.values.astype(np.float64)
        grads = gradient_field(volume.grid) if cfg.lam > 0 else None
    return values, grads


def train(volume: Volume, arch: NetworkArch, cfg: TrainConfig, params: Parameters | None = None,
          callback=None):
    """Fit a network to ``volume``; returns ``(float32 Parameters, TrainLog)``.

    Each epoch takes ``ceil(C / batch_size)`` steps, each on a fresh batch
    drawn uniformly with replacement.  Everything random derives from
    ``cfg.seed``.
    """
    if arch.d != volume.dims:
        raise ConfigurationError(f"network takes {arch.d}D input, volume is {volume.dims}D")
    values, grads_all = _targets(volume, cfg)
    resolution = volume.resolution
    coords_all = grid_coordinates(resolution)

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    if params is None:
        params = init_params(arch, np.random.default_rng(seeds[0]))
    params = params.astype(np.float64)
    rng = np.random.default_rng(seeds[1])
    probe = None
    if cfg.probe_size:
        probe = np.random.default_rng(seeds[2]).integers(0, volume.size, cfg.probe_size)

    n_params = params.size
    lr0 = auto_learning_rate(n_params) if cfg.lr_initial == "auto" else float(cfg.lr_initial)
    steps = math.ceil(volume.size / cfg.batch_size)
    state = AdamState.fresh(params)
    log = TrainLog()
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        lr = lr_at_epoch(lr0, epoch, cfg)
        total = 0.0
        for step in range(steps):
            flat = rng.integers(0, volume.size, size=cfg.batch_size)
            batch = SampleBatch(coords_all[flat], values[flat],
                                None if grads_all is None else grads_all[flat])
            # overflow shows up as a non-finite loss, reported below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_gradients(params, batch, cfg.lam, arch.omega0)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, step, loss)
            params, state = adam_step(params, grads, state, lr)
            total += loss
        psnr = None
        if probe is not None:
            pred = forward_batch(params, coords_all[probe], arch.omega0)
            mse = np.mean((pred - values[probe]) ** 2)
            span = values.max() - values.min()
            psnr = math.inf if mse == 0 else 10 * math.log10(span ** 2 / mse)
        rec = EpochRecord(epoch, lr, total / steps, psnr, time.perf_counter() - start)
        log.records.append(rec)
        logger.debug("epoch %d lr %.3g loss %.6g psnr %s", *rec[:4])
        if callback is not None:
            callback(rec, params)
    return params.astype(np.float32), log
