"""Command-line driver for the exporter.

Subcommands: `init` writes a fresh seeded model artifact, `serve` answers
the ORC1 probability protocol over stdio or TCP, and `export-crp` /
`export-occlusion` turn a spectrogram file plus a target label into a
saliency-map file the analysis pipeline can import.
"""

import argparse
import sys

from .crp import UnsupportedLayerError, epsilon_lrp
from .model import (DEFAULT_LABELS, init_bundle, load_bundle, save_bundle)
from .occlusion import occlusion_relevance
from .server import serve_stdio, serve_tcp
from .sgms import SpectroGeometry, read_sgm, write_sgms


def _labels(text: str) -> tuple:
    labels = tuple(t.strip() for t in text.split(",") if t.strip())
    if len(labels) < 2:
        raise argparse.ArgumentTypeError("need at least two labels")
    if len(set(labels)) != len(labels):
        raise argparse.ArgumentTypeError("labels must be unique")
    return labels


def _mask(text: str) -> str:
    if text in ("mean", "floor") or text.startswith("fixed:"):
        return text
    raise argparse.ArgumentTypeError(
        f"mask must be mean, floor, or fixed:<v>, got {text!r}")


def _endpoint(text: str) -> tuple:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(
            f"expected [HOST]:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _fmax(text: str):
    return None if text == "none" else float(text)


def add_geometry_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("spectrogram geometry (stamped into the output)")
    d = SpectroGeometry()
    g.add_argument("--n-fft", type=int, default=d.n_fft)
    g.add_argument("--win-length", type=int, default=d.win_length)
    g.add_argument("--hop-length", type=int, default=d.hop_length)
    g.add_argument("--n-mels", type=int, default=d.n_mels)
    g.add_argument("--sample-rate", type=int, default=d.sample_rate)
    g.add_argument("--fmin", type=float, default=d.fmin)
    g.add_argument("--fmax", type=_fmax, default=d.fmax,
                   help="Hz, or 'none' for Nyquist")
    g.add_argument("--log-floor", type=float, default=d.log_floor)


def geometry_from_args(args) -> SpectroGeometry:
    return SpectroGeometry(
        n_fft=args.n_fft, win_length=args.win_length,
        hop_length=args.hop_length, n_mels=args.n_mels,
        sample_rate=args.sample_rate, fmin=args.fmin, fmax=args.fmax,
        log_floor=args.log_floor)


def cmd_init(args) -> int:
    bundle = init_bundle(args.labels, args.height, args.width, args.seed)
    save_bundle(bundle, args.out)
    print(f"wrote {args.out}: {len(bundle.labels)} labels, "
          f"{bundle.input_h}x{bundle.input_w} input")
    return 0


def cmd_serve(args) -> int:
    bundle = load_bundle(args.model)
    if args.tcp is None:
        serve_stdio(bundle)
        return 0
    host, port = args.tcp
    print(f"serving ORC1 on {host}:{port}", file=sys.stderr)
    serve_tcp(bundle, host, port)
    return 0


def _load_for_export(args):
    bundle = load_bundle(args.model)
    matrix, _ = read_sgm(args.spec)
    bundle.check_dims(*matrix.shape)
    if args.target not in bundle.labels:
        raise ValueError(f"target {args.target!r} not among model labels "
                         f"{list(bundle.labels)}")
    return bundle, matrix


def cmd_export_crp(args) -> int:
    bundle, matrix = _load_for_export(args)
    relevance = epsilon_lrp(bundle, matrix, args.target)
    write_sgms(relevance, "crp", args.target,
               geometry_from_args(args).digest(), args.out)
    print(f"wrote {args.out}: crp map for {args.target!r}, "
          f"{relevance.shape[0]}x{relevance.shape[1]}")
    return 0


def cmd_export_occlusion(args) -> int:
    bundle, matrix = _load_for_export(args)
    relevance = occlusion_relevance(
        bundle, matrix, args.target, window=args.occ_window,
        stride=args.occ_stride, mask=args.mask, log_floor=args.log_floor)
    write_sgms(relevance, "occlusion", args.target,
               geometry_from_args(args).digest(), args.out)
    print(f"wrote {args.out}: occlusion map for {args.target!r}, "
          f"{relevance.shape[0]}x{relevance.shape[1]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="serexport",
        description="Serve a speech-emotion model over ORC1 and export "
                    "saliency maps for the analysis pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a fresh seeded model artifact")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", type=_labels, default=DEFAULT_LABELS,
                   help="comma-separated emotion labels")
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=132)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("serve", help="answer ORC1 requests (stdio or TCP)")
    p.add_argument("--model", required=True)
    p.add_argument("--tcp", type=_endpoint, default=None, metavar="[HOST]:PORT",
                   help="listen on TCP instead of stdio")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export-crp",
                       help="relevance-propagation map for one target class")
    p.add_argument("--model", required=True)
    p.add_argument("--spec", required=True, help="input spectrogram file")
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    add_geometry_args(p)
    p.set_defaults(func=cmd_export_crp)

    p = sub.add_parser("export-occlusion",
                       help="occlusion-sensitivity map for one target class")
    p.add_argument("--model", required=True)
    p.add_argument("--spec", required=True, help="input spectrogram file")
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--occ-window", type=int, default=10)
    p.add_argument("--occ-stride", type=int, default=3)
    p.add_argument("--mask", type=_mask, default="mean")
    add_geometry_args(p)
    p.set_defaults(func=cmd_export_occlusion)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UnsupportedLayerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
