"""The NVCF container: byte layout, bit packing, decoding and size accounting.

Layout (version 1, all scalars little-endian)::

    offset  size  field
    0       4     magic b"NVCF"
    4       2     version (u16) = 1
    6       1     d (u8)
    7       1     bits b (u8)
    8       2     n_blocks (u16)
    10      4     k (u32)
    14      4     omega0 (f32)
    18      4d    resolution (u32 per axis)
    18+4d   4     vmin (f32)
    22+4d   4     vmax (f32)
    26+4d         payload

Payload: ``W_first`` (k x d), ``b_first`` (k), then ``b1_i, b2_i`` for each
block, ``W_last`` (k), ``b_last`` (1), all float32 row-major.  Then for each
block matrix in the order ``M1_0, M2_0, M1_1, ...``: ``2**b`` float32
centers followed by ``k*k`` codes of ``b`` bits each, packed LSB-first and
contiguous, the layer's code stream zero-padded to a whole byte.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

from .errors import FormatError
from .field_net import NetworkArch, forward_batch
from .quantizer import QuantizedLayer, QuantizedModel, dequantize_model
from .volume import Volume, denormalize_values, grid_coordinates

MAGIC = b"NVCF"
VERSION = 1
_FIXED = struct.Struct("<4sHBBHIf")


def header_size(d: int) -> int:
    return _FIXED.size + 4 * d + 8


def unquantized_count(arch: NetworkArch) -> int:
    k, d, n = arch.k, arch.d, arch.n_blocks
    return k * d + k + 2 * n * k + k + 1


def code_bytes(entries: int, bits: int) -> int:
    return (entries * bits + 7) // 8


def file_size_bits(arch: NetworkArch, bits: int) -> int:
    """Exact size of an encoded model, in bits."""
    layer = 32 * (1 << bits) + 8 * code_bytes(arch.k * arch.k, bits)
    return 8 * header_size(arch.d) + 32 * unquantized_count(arch) + 2 * arch.n_blocks * layer


def pack_codes(codes: np.ndarray, bits: int) -> bytes:
    codes = np.asarray(codes, dtype=np.uint32)
    shifts = np.arange(bits, dtype=np.uint32)
    stream = ((codes[:, None] >> shifts) & 1).astype(np.uint8).ravel()
    return np.packbits(stream, bitorder="little").tobytes()


def unpack_codes(data: bytes, count: int, bits: int) -> np.ndarray:
    stream = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    stream = stream[: count * bits].reshape(count, bits).astype(np.uint32)
    return (stream << np.arange(bits, dtype=np.uint32)).sum(axis=1).astype(np.uint16)


def _f32(a) -> bytes:
    return np.asarray(a, dtype="<f4").tobytes()


def serialize(qm: QuantizedModel) -> bytes:
    arch = qm.arch
    resolution = qm.resolution
    if len(resolution) != arch.d:
        raise ValueError(f"model resolution {resolution} does not match d={arch.d}")
    parts = [
        _FIXED.pack(MAGIC, VERSION, arch.d, qm.bits, arch.n_blocks, arch.k, arch.omega0),
        struct.pack(f"<{arch.d}I", *resolution),
        struct.pack("<ff", qm.vmin, qm.vmax),
        _f32(qm.W_first),
        _f32(qm.b_first),
    ]
    for i in range(arch.n_blocks):
        parts += [_f32(qm.b1[i]), _f32(qm.b2[i])]
    parts += [_f32(qm.W_last), _f32(qm.b_last)]
    for layer in qm.layers:
        parts += [_f32(layer.centers), pack_codes(layer.codes, qm.bits)]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def floats(self, count: int, shape=None) -> np.ndarray:
        arr = np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)
        return arr if shape is None else arr.reshape(shape)


def read_header(data: bytes):
    """Parse and validate the header; returns ``(arch, bits, resolution, vmin, vmax)``."""
    if len(data) < _FIXED.size:
        raise FormatError(f"truncated header: need {_FIXED.size} bytes, have {len(data)}",
                          offset=len(data))
    magic, version, d, bits, n_blocks, k, omega0 = _FIXED.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if d not in (3, 4):
        raise FormatError(f"invalid dimension {d}", offset=6)
    if not 1 <= bits <= 16:
        raise FormatError(f"invalid bit width {bits}", offset=7)
    if n_blocks < 1 or k < 1:
        raise FormatError(f"invalid network shape k={k}, n_blocks={n_blocks}", offset=8)
    hsize = header_size(d)
    if len(data) < hsize:
        raise FormatError(f"truncated header: need {hsize} bytes, have {len(data)}",
                          offset=len(data))
    resolution = struct.unpack_from(f"<{d}I", data, _FIXED.size)
    vmin, vmax = struct.unpack_from("<ff", data, _FIXED.size + 4 * d)
    arch = NetworkArch(d, k, n_blocks, omega0)
    return arch, bits, tuple(resolution), float(vmin), float(vmax)


def deserialize(data: bytes) -> QuantizedModel:
    """Inverse of :func:`serialize`."""
    data = bytes(data)
    arch, bits, resolution, vmin, vmax = read_header(data)
    expected = file_size_bits(arch, bits) // 8
    if len(data) != expected:
        raise FormatError(f"payload length mismatch: header implies {expected} bytes, "
                          f"file has {len(data)}", offset=min(len(data), expected))
    k, d, n = arch.k, arch.d, arch.n_blocks
    r = _Reader(data)
    r.pos = header_size(d)
    W_first = r.floats(k * d, (k, d))
    b_first = r.floats(k)
    b1 = np.empty((n, k), np.float32)
    b2 = np.empty((n, k), np.float32)
    for i in range(n):
        b1[i] = r.floats(k)
        b2[i] = r.floats(k)
    W_last = r.floats(k, (1, k))
    b_last = r.floats(1)
    layers = []
    nbytes = code_bytes(k * k, bits)
    for _ in range(2 * n):
        centers = r.floats(1 << bits)
        codes = unpack_codes(r.take(nbytes), k * k, bits)
        layers.append(QuantizedLayer(centers, codes, k, k))
    return QuantizedModel(arch, bits, W_first, b_first, b1, b2, W_last, b_last, layers,
                          vmin, vmax, resolution)


def compression_ratio(volume, file, source_bits: int = 32) -> float:
    """Source size over encoded size, both in bits.

    ``volume`` may be a :class:`Volume` or a sample count; ``file`` may be
    the encoded bytes or their length.
    """
    count = volume.size if isinstance(volume, Volume) else int(volume)
    nbytes = file if isinstance(file, (int, np.integer)) else len(file)
    return count * source_bits / (8 * nbytes)


def evaluate(qm: QuantizedModel, coords, chunk: int = 1 << 16) -> np.ndarray:
    """Decoded field values (denormalized) at arbitrary coordinates."""
    params = dequantize_model(qm)
    coords = np.asarray(coords, dtype=np.float64)
    out = np.empty(coords.shape[0])
    for start in range(0, coords.shape[0], chunk):
        stop = start + chunk
        out[start:stop] = forward_batch(params, coords[start:stop], qm.arch.omega0)
    return denormalize_values(out, qm.vmin, qm.vmax)


def reconstruct_volume(qm: QuantizedModel, resolution: Sequence[int] | None = None) -> Volume:
    """Evaluate the network at every vertex of a grid; defaults to the stored resolution."""
    resolution = tuple(int(s) for s in (qm.resolution if resolution is None else resolution))
    if len(resolution) != qm.arch.d:
        raise ValueError(f"resolution {resolution} has {len(resolution)} axes, model takes "
                         f"{qm.arch.d}")
    values = evaluate(qm, grid_coordinates(resolution))
    return Volume.from_array(values.astype(np.float32), resolution)
