"""Command-line interface: ``nvcodec {encode,decode,metrics,render,inspect}``.

Machine-readable results go to stdout as one JSON line; human summaries go
to stderr.  Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import codec
from .errors import NVCodecError
from .field_net import DEFAULT_OMEGA0, NetworkArch, derive_layer_width, param_count
from .metrics import PSNR_INF, evaluate_model, psnr
from .quantizer import quantize_model
from .render import Camera, TransferFunction, default_transfer_function, raymarch_neural, write_image
from .trainer import TrainConfig, train
from .volume import PRECISIONS, load_raw, save_raw

logger = logging.getLogger("nvcodec")

SOURCE_BITS = {"float32": 32, "uint8": 8}


class UsageError(Exception):
    pass


def _json_float(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _emit(record: dict) -> None:
    print(json.dumps({k: _json_float(v) for k, v in record.items()}))


def _atomic_write(path, write) -> None:
    """Write via a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".nvcodec-")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_model(path):
    with open(path, "rb") as fh:
        return codec.deserialize(fh.read())


def cmd_encode(args) -> int:
    if (args.ratio is None) == (args.weights is None):
        raise UsageError("give exactly one of --ratio or --weights")
    volume = load_raw(args.input, args.resolution, args.precision)
    budget = args.weights if args.weights is not None else int(volume.size // args.ratio)
    if budget < 1:
        raise UsageError(f"weight budget {budget} is not positive")
    start = time.perf_counter()
    k = derive_layer_width(budget, volume.dims, args.blocks)
    arch = NetworkArch(volume.dims, k, args.blocks, args.omega0)
    lr = "auto" if args.lr == "auto" else float(args.lr)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lam=args.lam, lr_initial=lr,
                      seed=args.seed)
    params, log = train(volume, arch, cfg)
    qm = quantize_model(params, args.bits, seed=args.seed, vmin=volume.vmin, vmax=volume.vmax,
                        omega0=arch.omega0, resolution=volume.resolution)
    data = codec.serialize(qm)

    def write(tmp):
        with open(tmp, "wb") as fh:
            fh.write(data)

    _atomic_write(args.output, write)
    if args.log_csv:
        log.to_csv(args.log_csv)
    seconds = time.perf_counter() - start
    quality = psnr(volume, codec.reconstruct_volume(qm))
    ratio = codec.compression_ratio(volume.size, len(data), SOURCE_BITS[args.precision])
    _emit({"ratio": ratio, "psnr": quality, "seconds": seconds, "bytes": len(data),
           "weights": param_count(arch), "k": k, "n_blocks": args.blocks, "bits": args.bits})
    print(f"encoded {args.input} -> {args.output}: {ratio:.1f}:1, {quality:.2f} dB, "
          f"{seconds:.1f} s", file=sys.stderr)
    return 0


def cmd_decode(args) -> int:
    qm = _read_model(args.input)
    resolution = tuple(args.resolution) if args.resolution else qm.resolution
    if len(resolution) != qm.arch.d:
        raise UsageError(f"--resolution needs {qm.arch.d} values")
    volume = codec.reconstruct_volume(qm, resolution)
    _atomic_write(args.output, lambda tmp: save_raw(volume, tmp))
    print(f"decoded {args.input} at {'x'.join(map(str, resolution))} -> {args.output}",
          file=sys.stderr)
    return 0


def cmd_metrics(args) -> int:
    qm = _read_model(args.input)
    resolution = tuple(args.resolution)
    if resolution != qm.resolution:
        raise UsageError(f"reference resolution {resolution} does not match the model's "
                         f"{qm.resolution}")
    reference = load_raw(args.reference, resolution, args.precision)
    report = evaluate_model(qm, reference, with_net_grad=args.net_grad)
    print(report.to_json())
    return 0


def cmd_render(args) -> int:
    qm = _read_model(args.input)
    if args.time is not None and qm.arch.d != 4:
        raise UsageError("--time only applies to 4D models")
    if args.time is None and qm.arch.d == 4:
        raise UsageError("4D models need --time")
    tf = TransferFunction.load(args.tf) if args.tf else default_transfer_function()
    cam = Camera(tuple(args.eye), tuple(args.look_at), tuple(args.up), args.fov, args.width,
                 args.height)
    img = raymarch_neural(qm, cam, tf, args.step, shaded=args.shaded, time=args.time)
    _atomic_write(args.output, lambda tmp: write_image(img, tmp))
    print(f"rendered {args.width}x{args.height} -> {args.output}", file=sys.stderr)
    return 0


def cmd_inspect(args) -> int:
    with open(args.input, "rb") as fh:
        data = fh.read()
    qm = codec.deserialize(data)
    arch = qm.arch
    count = int(np.prod(qm.resolution))
    code_bytes = codec.code_bytes(arch.k * arch.k, qm.bits)
    layers = [{"layer": i, "rows": layer.rows, "cols": layer.cols,
               "center_bytes": 4 * layer.centers.size, "code_bytes": code_bytes}
              for i, layer in enumerate(qm.layers)]
    _emit({
        "version": codec.VERSION, "d": arch.d, "resolution": list(qm.resolution),
        "n_blocks": arch.n_blocks, "k": arch.k, "bits": qm.bits, "omega0": arch.omega0,
        "vmin": qm.vmin, "vmax": qm.vmax, "weights": param_count(arch),
        "header_bytes": codec.header_size(arch.d),
        "full_precision_bytes": 4 * codec.unquantized_count(arch),
        "layers": layers, "total_bits": 8 * len(data),
        "ratio": codec.compression_ratio(count, len(data), args.source_bits),
    })
    return 0


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _floats3(parser, name, default, help):
    parser.add_argument(name, type=float, nargs=3, default=default, metavar=("X", "Y", "Z"),
                        help=help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvcodec", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=_positive_int, default=1,
                        help="cap on numerical library threads (default 1: reproducible)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="train, quantize and write an .nvcf file")
    p.add_argument("input", help="raw volume file")
    p.add_argument("output", help="destination .nvcf file")
    p.add_argument("--resolution", type=_positive_int, nargs="+", required=True)
    p.add_argument("--precision", choices=sorted(PRECISIONS), default="float32")
    budget = p.add_mutually_exclusive_group()
    budget.add_argument("--ratio", type=float, help="target C/m before quantization")
    budget.add_argument("--weights", type=_positive_int, help="weight budget m")
    p.add_argument("--blocks", type=_positive_int, default=8)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--bits", type=int, choices=range(1, 17), default=9, metavar="{1..16}")
    p.add_argument("--epochs", type=_positive_int, default=75)
    p.add_argument("--batch", type=_positive_int, default=16384)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", default="auto", help="initial learning rate or 'auto'")
    p.add_argument("--omega0", type=float, default=DEFAULT_OMEGA0)
    p.add_argument("--log-csv", help="write the per-epoch training log here")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="evaluate a model on a grid and write raw float32")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--resolution", type=_positive_int, nargs="+",
                   help="override the stored resolution")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("metrics", help="PSNR and gradient PSNR against a reference volume")
    p.add_argument("input")
    p.add_argument("reference")
    p.add_argument("--resolution", type=_positive_int, nargs="+", required=True)
    p.add_argument("--precision", choices=sorted(PRECISIONS), default="float32")
    p.add_argument("--net-grad", action="store_true", help="also score analytic network gradients")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("render", help="ray-march the network into a PPM image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--tf", help="transfer function file ('position r g b a' lines)")
    _floats3(p, "--eye", [2.2, 1.6, 2.6], "camera position")
    _floats3(p, "--look-at", [0.0, 0.0, 0.0], "point the camera looks at")
    _floats3(p, "--up", [0.0, 1.0, 0.0], "camera up vector")
    p.add_argument("--fov", type=float, default=45.0)
    p.add_argument("--width", type=_positive_int, default=128)
    p.add_argument("--height", type=_positive_int, default=128)
    p.add_argument("--step", type=float, default=0.005)
    p.add_argument("--shaded", action="store_true")
    p.add_argument("--time", type=float)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("inspect", help="print header fields and size accounting")
    p.add_argument("input")
    p.add_argument("--source-bits", type=_positive_int, default=32,
                   help="bits per source sample for the ratio")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (NVCodecError, OSError, ValueError) as exc:
        print(f"nvcodec {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
