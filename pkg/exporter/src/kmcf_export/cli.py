"""Command-line front end."""

import argparse
import sys

from .errors import ExportError
from .export import ExportSpec, export_sequence
from .network import DEFAULT_LAYERS

EX_OK = 0
EX_ERROR = 1
EX_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EX_USAGE)


def build_parser() -> _Parser:
    parser = _Parser(prog="kmcf-export",
                     description="Export CNN stage activations to KMCF files.")
    sub = parser.add_subparsers(dest="command")

    export = sub.add_parser("export", help="export one image sequence")
    export.add_argument("--seq", required=True, help="sequence directory")
    export.add_argument("--out", required=True, help="output KMCF path")
    export.add_argument("--layers", default=",".join(DEFAULT_LAYERS),
                        help="comma-separated stage names")
    export.add_argument("--config", default=None,
                        help="tracker config file for crop geometry")
    export.add_argument("--weights", default=None,
                        help="state-dict file with network weights")
    export.add_argument("--random-weights", type=int, default=None,
                        metavar="SEED", help="seeded random init instead of "
                        "pretrained weights")
    export.add_argument("--resize", default=None, metavar="WxH",
                        help="input patch size override")
    export.add_argument("--pre-relu", action="store_true",
                        help="store activations before the nonlinearity")
    export.add_argument("--batch-size", type=int, default=4)
    export.set_defaults(func=cmd_export)
    return parser


def _parse_resize(text: str, parser_error) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        parser_error(f"--resize needs WxH, got {text!r}")
    try:
        return (int(parts[0]), int(parts[1]))
    except ValueError:
        parser_error(f"--resize needs integers, got {text!r}")


def cmd_export(args, parser) -> int:
    layers = tuple(name.strip() for name in args.layers.split(",")
                   if name.strip())
    resize = None
    if args.resize:
        resize = _parse_resize(args.resize, parser.error)
    spec = ExportSpec(
        sequence_dir=args.seq,
        out_path=args.out,
        layers=layers,
        resize=resize,
        config_path=args.config,
        weights_path=args.weights,
        random_seed=args.random_weights,
        post_relu=not args.pre_relu,
        batch_size=args.batch_size,
    )
    result = export_sequence(spec)
    print(f"wrote {result.frames} frames x {len(result.layers)} layers "
          f"to {result.out_path}")
    for info in result.layers:
        print(f"  {info.name}: id={info.layer_id} cell={info.cell_size} "
              f"{info.channels}x{info.rows}x{info.cols}")
    return EX_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.error("a subcommand is required")
    try:
        return args.func(args, parser)
    except SystemExit:
        raise
    except (ExportError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EX_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
