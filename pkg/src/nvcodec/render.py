"""Direct volume rendering of a compressed model or of a sampled grid.

Both renderers share one marching loop: rays step through the ``[-1, 1]^3``
box at a fixed spacing, samples are mapped through a transfer function and
composited front to back.  The neural renderer evaluates the network for all
live rays at once; the grid renderer uses trilinear interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError
from .field_net import forward_batch, input_gradient_batch
from .quantizer import QuantizedModel, dequantize_model
from .volume import Volume

STEP_REF = 0.01
TERMINATE_ALPHA = 0.99
AMBIENT, DIFFUSE, SPECULAR, SHININESS = 0.3, 0.7, 0.3, 32.0


@dataclass(frozen=True)
class Camera:
    eye: tuple
    look_at: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 1.0, 0.0)
    fov: float = 45.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        eye = np.asarray(self.eye, float)
        fwd = np.asarray(self.look_at, float) - eye
        if np.linalg.norm(fwd) == 0:
            raise ConfigurationError("camera eye and look_at coincide")
        if np.linalg.norm(np.cross(fwd, np.asarray(self.up, float))) < 1e-12:
            raise ConfigurationError("camera up vector is parallel to the view direction")
        if not 0 < self.fov < 180:
            raise ConfigurationError(f"fov must lie in (0, 180), got {self.fov}")
        if self.width < 1 or self.height < 1:
            raise ConfigurationError(f"image size must be positive, got {self.width}x{self.height}")

    def basis(self):
        eye = np.asarray(self.eye, float)
        fwd = np.asarray(self.look_at, float) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, float))
        right /= np.linalg.norm(right)
        return fwd, right, np.cross(right, fwd)

    def rays(self):
        """Origins and unit directions, one per pixel, row-major from the top-left."""
        fwd, right, up = self.basis()
        half = math.tan(math.radians(self.fov) / 2)
        aspect = self.width / self.height
        xs = (2 * (np.arange(self.width) + 0.5) / self.width - 1) * half * aspect
        ys = (1 - 2 * (np.arange(self.height) + 0.5) / self.height) * half
        gx, gy = np.meshgrid(xs, ys)
        dirs = fwd + gx[..., None] * right + gy[..., None] * up
        dirs = dirs.reshape(-1, 3)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(np.asarray(self.eye, float), dirs.shape).copy()
        return origins, dirs


class TransferFunction:
    """Piecewise-linear map from ``[0, 1]`` to RGBA."""

    def __init__(self, positions, rgba):
        self.positions = np.asarray(positions, dtype=np.float64)
        self.rgba = np.asarray(rgba, dtype=np.float64).reshape(-1, 4)
        p = self.positions
        if p.ndim != 1 or p.size < 2 or p.size != self.rgba.shape[0]:
            raise ConfigurationError("transfer function needs >= 2 control points with RGBA each")
        if p[0] != 0 or p[-1] != 1 or np.any(np.diff(p) <= 0):
            raise ConfigurationError("control positions must increase strictly from 0 to 1")
        if np.any(self.rgba < 0) or np.any(self.rgba > 1):
            raise ConfigurationError("RGBA components must lie in [0, 1]")

    @classmethod
    def load(cls, path) -> "TransferFunction":
        """Read ``position r g b a`` lines; blank lines and ``#`` comments are skipped."""
        rows = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 5:
                    raise ConfigurationError(f"{path}:{lineno}: expected 5 numbers, got {len(parts)}")
                rows.append([float(v) for v in parts])
        if not rows:
            raise ConfigurationError(f"{path}: no control points")
        rows = np.array(rows)
        return cls(rows[:, 0], rows[:, 1:])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for p, c in zip(self.positions, self.rgba):
                fh.write(" ".join(repr(float(v)) for v in (p, *c)) + "\n")

    def __call__(self, s: np.ndarray) -> np.ndarray:
        s = np.clip(s, 0.0, 1.0)
        return np.stack([np.interp(s, self.positions, self.rgba[:, c]) for c in range(4)], axis=-1)


def default_transfer_function() -> TransferFunction:
    return TransferFunction(
        [0.0, 0.3, 0.6, 1.0],
        [[0.0, 0.0, 0.0, 0.0], [0.1, 0.3, 0.9, 0.02], [0.9, 0.8, 0.2, 0.08], [1.0, 0.2, 0.1, 0.2]],
    )


@dataclass
class Image:
    radiance: np.ndarray  # height x width x 3, floats in [0, 1]

    @property
    def width(self) -> int:
        return self.radiance.shape[1]

    @property
    def height(self) -> int:
        return self.radiance.shape[0]

    @property
    def pixels(self) -> np.ndarray:
        return np.round(np.clip(self.radiance, 0, 1) * 255).astype(np.uint8)


def write_image(img, path) -> None:
    """Binary PPM (P6)."""
    pixels = img.pixels if isinstance(img, Image) else np.asarray(img, np.uint8)
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise ValueError(f"{path}: not an 8-bit P6 file")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos + 1:pos + 1 + 3 * w * h], np.uint8).reshape(h, w, 3)


def _box_hits(origins, dirs):
    """Entry/exit distances of each ray through ``[-1, 1]^3``; ``near > far`` on a miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (-1.0 - origins) * inv
        t1 = (1.0 - origins) * inv
    lo = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    hi = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    near = np.maximum(lo.max(axis=1), 0.0)
    far = hi.min(axis=1)
    return near, far


def _shade(rgb, grads, dirs):
    norm = np.linalg.norm(grads, axis=1)
    ok = norm >= 1e-8
    out = rgb.copy()
    if not ok.any():
        return out
    n = -grads[ok] / norm[ok, None]
    view = -dirs[ok]
    # headlight: light travels along the view direction
    diff = np.abs(np.sum(n * view, axis=1))
    spec = diff ** SHININESS  # half vector equals the view vector for a headlight
    out[ok] = rgb[ok] * (AMBIENT + DIFFUSE * diff)[:, None] + SPECULAR * spec[:, None]
    return np.clip(out, 0.0, 1.0)


def _march(cam: Camera, tf: TransferFunction, step: float, sample: Callable, vrange,
           gradient: Callable | None = None, alpha_history: list | None = None) -> Image:
    if not step > 0:
        raise ConfigurationError(f"step must be positive, got {step}")
    origins, dirs = cam.rays()
    n_rays = dirs.shape[0]
    near, far = _box_hits(origins, dirs)
    color = np.zeros((n_rays, 3))
    alpha = np.zeros(n_rays)
    vmin, vmax = vrange
    span = vmax - vmin if vmax > vmin else 1.0
    live = np.flatnonzero(near <= far)
    j = 0
    while live.size:
        t = near[live] + j * step
        inside = t <= far[live]
        live, t = live[inside], t[inside]
        if not live.size:
            break
        pos = origins[live] + t[:, None] * dirs[live]
        values = sample(pos)
        rgba = tf((values - vmin) / span)
        a = 1.0 - (1.0 - rgba[:, 3]) ** (step / STEP_REF)
        rgb = rgba[:, :3]
        if gradient is not None:
            rgb = _shade(rgb, gradient(pos), dirs[live])
        weight = (1.0 - alpha[live]) * a
        color[live] += weight[:, None] * rgb
        alpha[live] += weight
        if alpha_history is not None:
            alpha_history.append(alpha.copy())
        live = live[alpha[live] <= TERMINATE_ALPHA]
        j += 1
    return Image(color.reshape(cam.height, cam.width, 3))


def raymarch_neural(qm: QuantizedModel, cam: Camera, tf: TransferFunction, step: float = 0.005,
                    shaded: bool = False, time: float | None = None,
                    alpha_history: list | None = None) -> Image:
    """Render by evaluating the network along every ray.

    For a 4D model ``time`` in ``[-1, 1]`` is appended to each sample
    position as the fourth input.
    """
    d = qm.arch.d
    if (time is None) != (d == 3):
        raise ConfigurationError("time must be given exactly when the model is 4D")
    params = dequantize_model(qm)
    omega0 = qm.arch.omega0
    half = 0.5 * (qm.vmax - qm.vmin)

    def inputs(pos):
        if time is None:
            return pos
        return np.column_stack([pos, np.full(pos.shape[0], float(time))])

    def sample(pos):
        return (forward_batch(params, inputs(pos), omega0) + 1.0) * half + qm.vmin

    def gradient(pos):
        return input_gradient_batch(params, inputs(pos), omega0)[:, :3]

    return _march(cam, tf, step, sample, (qm.vmin, qm.vmax), gradient if shaded else None,
                  alpha_history)


def raymarch_grid(volume: Volume, cam: Camera, tf: TransferFunction, step: float = 0.005,
                  alpha_history: list | None = None) -> Image:
    """Same pipeline as :func:`raymarch_neural`, sampling a 3D grid trilinearly."""
    if volume.dims != 3:
        raise ConfigurationError("grid rendering needs a 3D volume")
    grid = volume.grid.astype(np.float64)
    scale = np.array([(s - 1) / 2.0 for s in volume.resolution])

    def sample(pos):
        idx = ((pos + 1.0) * scale).T
        return ndimage.map_coordinates(grid, idx, order=1, mode="nearest")

    return _march(cam, tf, step, sample, (volume.vmin, volume.vmax), None, alpha_history)
