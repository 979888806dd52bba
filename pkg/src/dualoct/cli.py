"""Command-line entry point: ``dualoct <command> ...``.

Exit status is 0 on success, 1 for command-line misuse and 2 for bad input
data (unreadable or malformed files, invalid config values). Every command
is a pure function of its flags, input files and seed.
"""

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, fields

from dualoct import io, metrics, mri, network
from dualoct.tensor import ComplexTensor

log = logging.getLogger("dualoct")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# run configuration


# dataset keys as they appear in a run config, mapped to DatasetSpec fields;
# ``coils`` is shared with the network and ``data_seed`` avoids a clash with ``seed``
_DATA_KEYS = {"n_train": "n_train", "n_val": "n_val", "height": "height", "width": "width",
              "pattern": "pattern", "acceleration": "acceleration", "mask_seed": "mask_seed",
              "n_ellipses": "n_ellipses", "data_seed": "seed"}
_PATH_KEYS = ("init_ckpt",)


@dataclass(frozen=True)
class RunConfig:
    network: network.NetworkConfig
    data: network.DatasetSpec
    iterations: int = 400
    init_ckpt: str | None = None

    @classmethod
    def from_values(cls, values, base_dir="."):
        net_keys = {f.name for f in fields(network.NetworkConfig)}
        known = net_keys | set(_DATA_KEYS) | {"iterations"} | set(_PATH_KEYS)
        unknown = sorted(set(values) - known)
        if unknown:
            raise DataError(f"unknown config keys: {', '.join(unknown)}")
        try:
            net = network.parse_config({k: v for k, v in values.items() if k in net_keys})
            types = {f.name: f.type for f in fields(network.DatasetSpec)}
            data_kw = {_DATA_KEYS[k]: types[_DATA_KEYS[k]](v) for k, v in values.items() if k in _DATA_KEYS}
            data = network.DatasetSpec(coils=net.coils, **data_kw)
            mri.Pattern(data.pattern)
            iterations = int(values.get("iterations", cls.iterations))
        except (TypeError, ValueError) as e:
            raise DataError(f"invalid config value: {e}") from e
        if iterations < 1:
            raise DataError("iterations must be >= 1")
        init = values.get("init_ckpt")
        if init is not None:
            init = os.path.join(base_dir, init)
        return cls(net, data, iterations, init)

    @classmethod
    def read(cls, path):
        try:
            values = io.read_keyvalue(path)
        except OSError as e:
            raise DataError(f"cannot read config {path}: {e.strerror}") from e
        except ValueError as e:
            raise DataError(str(e)) from e
        return cls.from_values(values, os.path.dirname(os.path.abspath(path)))

    def items(self):
        out = list(network.config_items(self.network))
        for key, name in _DATA_KEYS.items():
            v = getattr(self.data, name)
            out.append((key, repr(v) if isinstance(v, float) else v))
        out.append(("iterations", self.iterations))
        if self.init_ckpt is not None:
            out.append(("init_ckpt", self.init_ckpt))
        return out


# ---------------------------------------------------------------------------
# helpers


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"sizes must be positive, got {text!r}")
    return h, w


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _need_file(path):
    if not os.path.isfile(path):
        raise DataError(f"no such file: {path}")


def _need_dir(path):
    if not os.path.isdir(path):
        raise DataError(f"no such directory: {path}")


def _out_dir(path):
    if os.path.exists(path) and not os.path.isdir(path):
        raise DataError(f"output path exists and is not a directory: {path}")
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise DataError(f"parent directory does not exist: {parent}")


def _out_file(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise DataError(f"parent directory does not exist: {parent}")


def _read(path):
    _need_file(path)
    return io.read_doct(path)


def _read_mask(path):
    try:
        return mri.SamplingMask.from_tensor(_read(path))
    except ValueError as e:
        if isinstance(e, io.DOCTFormatError):
            raise
        raise DataError(f"{path}: {e}") from e


def _magnitude(t):
    """Real image for metrics: RSS over the channel axis, or |x| for a 2-D tensor."""
    if t.ndim == 2:
        return t.abs()
    if t.ndim == 3:
        return mri.rss_combine(t)[0]
    raise DataError(f"expected a [H,W] or [c,H,W] tensor, got shape {t.shape}")


def _fmt(v):
    return "inf" if v == math.inf else repr(float(v))


# ---------------------------------------------------------------------------
# commands


def cmd_mask(args):
    _out_file(args.out)
    h, w = args.size
    try:
        m = mri.make_mask(args.pattern, args.accel, h, w, seed=args.seed, center_lines=args.center_lines)
    except ValueError as e:
        raise DataError(str(e)) from e
    io.write_doct(args.out, m.to_tensor())
    print(f"pattern={m.pattern.value} samples={int(m.grid.sum())} achieved_accel={m.achieved_acceleration:.4f}")


def cmd_phantom(args):
    _out_file(args.out)
    h, w = args.size
    try:
        x = mri.make_phantom(h, w, args.n, seed=args.seed)
    except ValueError as e:
        raise DataError(str(e)) from e
    io.write_doct(args.out, x)
    if args.pgm:
        io.write_pgm(args.pgm, x.abs())


def cmd_simulate(args):
    _need_file(args.phantom)
    _need_file(args.mask)
    _out_dir(args.out)
    x = _read(args.phantom)
    mask = _read_mask(args.mask)
    if x.ndim == 2:
        x = ComplexTensor(x.real[None], x.imag[None])
    if x.ndim != 3 or x.shape[0] != 1 or x.shape[1:] != mask.shape:
        raise DataError(f"phantom shape {x.shape} does not match mask {mask.shape}")
    if args.coils < 1:
        raise DataError("--coils must be >= 1")
    coils = mri.make_sensitivities(args.coils, *mask.shape)
    acq = mri.forward_model(x, coils, mask, keep_reference=True)
    zf = mri.zero_filled(acq)
    io.ensure_dir(args.out)
    out = {
        "kspace.doct": acq.y,
        "mask.doct": mask.to_tensor(),
        "reference_kspace.doct": acq.fully_sampled_reference,
        "coil_images.doct": mri.coil_images(x, coils),
        "sensitivities.doct": coils.maps,
        "image.doct": x,
        "zero_filled.doct": zf,
    }
    for name, t in out.items():
        io.write_doct(os.path.join(args.out, name), t)
    io.write_pgm(os.path.join(args.out, "image.pgm"), x.abs())
    io.write_pgm(os.path.join(args.out, "zero_filled.pgm"), mri.rss_combine(zf))
    print(f"coils={args.coils} achieved_accel={mask.achieved_acceleration:.4f}")


def cmd_train(args):
    _need_file(args.config)
    _out_dir(args.out)
    run = RunConfig.read(args.config)
    if run.init_ckpt is not None:
        _need_dir(run.init_ckpt)
    params = None
    if run.init_ckpt is not None:
        ck_config, params, _ = network.load_checkpoint(run.init_ckpt)
        if ck_config != run.network:
            raise DataError("init_ckpt network config differs from the run config")
    try:
        res = network.train(run.network, run.data, run.iterations, params=params,
                            progress=lambda r: log.info("epoch %d loss %.4f val psnr %.3f",
                                                        r["epoch"], r["loss"], r["val_psnr"]))
    except ValueError as e:
        raise DataError(str(e)) from e
    io.ensure_dir(args.out)
    network.save_checkpoint(args.out, run.network, res.params, res.state)
    network.write_metric_log(os.path.join(args.out, "metrics.csv"), res.log)
    io.write_keyvalue(os.path.join(args.out, "run.cfg"), run.items())
    print(f"initial_loss={res.initial_loss!r} final_loss={res.final_loss!r} "
          f"val_psnr={res.val['psnr']!r} zero_filled_psnr={res.val['zf_psnr']!r}")


def cmd_reconstruct(args):
    _need_dir(args.ckpt)
    _need_dir(args.acq)
    _out_file(args.out)
    try:
        config, params, _ = network.load_checkpoint(args.ckpt)
    except (OSError, KeyError) as e:
        raise DataError(f"cannot load checkpoint {args.ckpt}: {e}") from e
    y = _read(os.path.join(args.acq, "kspace.doct"))
    mask = _read_mask(os.path.join(args.acq, "mask.doct"))
    if y.ndim != 3 or y.shape[0] != config.coils:
        raise DataError(f"k-space shape {y.shape} does not match a {config.coils}-coil network")
    try:
        acq = mri.KSpaceAcquisition(y, mask)
        out = network.forward(params, acq)
    except ValueError as e:
        raise DataError(str(e)) from e
    io.write_doct(args.out, out)
    if args.pgm:
        io.write_pgm(args.pgm, mri.rss_combine(out))


def cmd_eval(args):
    ref_t = _read(args.ref)
    ref = _magnitude(ref_t)
    if not args.series:
        test = _magnitude(_read(args.test))
        try:
            p, s = metrics.psnr(ref, test), metrics.ssim(ref, test)
        except ValueError as e:
            raise DataError(str(e)) from e
        if args.header:
            print("ref,test,psnr,ssim")
        print(f"{args.ref},{args.test},{_fmt(p)},{_fmt(s)}")
        return
    # series: --test is a key=value file of alpha = reconstruction path
    if args.config is None:
        raise UsageError("--series needs --config for the FLOPs model")
    _need_file(args.test)
    run = RunConfig.read(args.config)
    try:
        entries = io.read_keyvalue(args.test)
        series = sorted((float(a), p) for a, p in entries.items())
    except ValueError as e:
        raise DataError(f"{args.test}: {e}") from e
    base = os.path.dirname(os.path.abspath(args.test))
    h, w = ref.shape
    print("alpha,flops,psnr")
    for alpha, path in series:
        test = _magnitude(_read(os.path.join(base, path)))
        try:
            flops = metrics.network_flops(run.network, h, w, alpha)
            p = metrics.psnr(ref, test)
        except ValueError as e:
            raise DataError(str(e)) from e
        print(f"{alpha!r},{flops},{_fmt(p)}")


def cmd_flops(args):
    _need_file(args.config)
    run = RunConfig.read(args.config)
    h, w = run.data.height, run.data.width
    alphas = args.alpha_sweep if args.alpha_sweep else [run.network.alpha]
    base = metrics.network_flops(run.network, h, w, 0.0)
    print("alpha,flops,relative")
    for a in alphas:
        try:
            f = metrics.network_flops(run.network, h, w, a)
        except ValueError as e:
            raise DataError(str(e)) from e
        print(f"{a!r},{f},{f / base!r}")


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = _Parser(prog="dualoct", description="Dual-Octave convolution MRI reconstruction toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("mask", help="generate an undersampling mask")
    s.add_argument("--pattern", required=True, choices=[e.value for e in mri.Pattern], help="mask family")
    s.add_argument("--accel", required=True, type=float, help="nominal acceleration factor R")
    s.add_argument("--size", required=True, type=_size, help="grid size HxW")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.add_argument("--center-lines", type=int, default=None,
                   help="fully sampled center columns/square (pattern default if omitted)")
    s.add_argument("--out", required=True, help="output DOCT file of 0/1 values")
    s.set_defaults(fn=cmd_mask)

    s = sub.add_parser("phantom", help="generate a random-ellipse complex phantom")
    s.add_argument("--size", required=True, type=_size, help="image size HxW")
    s.add_argument("--n", type=int, default=6, help="number of ellipses (default 6)")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.add_argument("--out", required=True, help="output DOCT file [1,H,W]")
    s.add_argument("--pgm", help="also write the magnitude as 16-bit PGM")
    s.set_defaults(fn=cmd_phantom)

    s = sub.add_parser("simulate", help="multi-coil acquisition of a phantom")
    s.add_argument("--phantom", required=True, help="phantom DOCT [1,H,W]")
    s.add_argument("--coils", type=int, default=4, help="number of receive coils (default 4)")
    s.add_argument("--mask", required=True, help="mask DOCT [H,W]")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("train", help="train a network from a key=value run config")
    s.add_argument("--config", required=True, help="run config file")
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("reconstruct", help="run a trained network on an acquisition")
    s.add_argument("--ckpt", required=True, help="checkpoint directory written by train")
    s.add_argument("--acq", required=True, help="acquisition directory written by simulate")
    s.add_argument("--out", required=True, help="output DOCT of reconstructed coil images")
    s.add_argument("--pgm", help="also write the RSS image as 16-bit PGM")
    s.set_defaults(fn=cmd_reconstruct)

    s = sub.add_parser("eval", help="PSNR/SSIM of a test image against a reference")
    s.add_argument("--ref", required=True, help="reference DOCT ([H,W] or [c,H,W], RSS-combined)")
    s.add_argument("--test", required=True,
                   help="test DOCT, or with --series a key=value file of alpha = DOCT path")
    s.add_argument("--series", action="store_true", help="emit alpha,flops,psnr rows")
    s.add_argument("--config", help="run config for the FLOPs model (--series only)")
    s.add_argument("--header", action="store_true", help="print a CSV header line first")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("flops", help="FLOPs of one network forward pass per sample")
    s.add_argument("--config", required=True, help="run config file")
    s.add_argument("--alpha-sweep", type=_float_list, default=None,
                   help="comma-separated alphas (default: the config alpha)")
    s.set_defaults(fn=cmd_flops)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.fn(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"dualoct: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except io.DOCTFormatError as e:
        print(f"dualoct: malformed DOCT file: {e}", file=sys.stderr)
        return EXIT_DATA
    except DataError as e:
        print(f"dualoct: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"dualoct: {e.filename or ''}: {e.strerror}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
