"""Command-line client for the tracking service.

Every subcommand builds a request model and posts it to the service — by
default an in-process instance of the app (no network), or a remote server
when --server is given. Exit codes: 0 success, 1 error, 2 tracking lost,
64 usage.
"""

from __future__ import annotations

import argparse
import asyncio
import sys

import httpx

EX_OK = 0
EX_ERROR = 1
EX_LOST = 2
EX_USAGE = 64


class _Parser(argparse.ArgumentParser):
    """argparse with BSD-style exit code 64 for usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EX_USAGE)


def _add_config_flags(sub, with_decoder: bool = True):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--features", help="gray | hog | kmcf:<path>")
    if with_decoder:
        sub.add_argument("--decoder", choices=["on", "off"])
        sub.add_argument("--decoder-weights", dest="decoder_weights",
                         help="KMCD weight file used when the decoder is on")
        sub.add_argument("--adaptive-lr", dest="adaptive_lr", choices=["on", "off"])
    sub.add_argument("--server", help="base URL of a running service "
                                      "(default: run in-process)")


def build_parser() -> _Parser:
    parser = _Parser(prog="mrcf", description=__doc__)
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)

    track = subs.add_parser("track", help="track one sequence")
    track.add_argument("--seq", required=True, help="sequence directory")
    track.add_argument("--init-box", dest="init_box",
                       help="x,y,w,h (default: first annotation line)")
    track.add_argument("--out", help="output directory for boxes.csv + manifest")
    _add_config_flags(track)
    track.set_defaults(func=cmd_track)

    ev = subs.add_parser("eval", help="run one-pass evaluation over a dataset")
    ev.add_argument("--data", required=True, help="dataset root of sequence dirs")
    ev.add_argument("--out", required=True, help="output directory for CSVs")
    ev.add_argument("--jobs", type=int, default=1)
    _add_config_flags(ev)
    ev.set_defaults(func=cmd_eval)

    tr = subs.add_parser("train-decoder", help="train decoder weights")
    tr.add_argument("--out", required=True, help="KMCD weight file to write")
    tr.add_argument("--samples", help="KMCS sample file to train on")
    tr.add_argument("--synthetic", type=int,
                    help="generate this many synthetic samples instead")
    tr.add_argument("--layers", type=int, default=4,
                    help="stack depth for synthetic samples")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--epochs", type=int, help="cap on training epochs")
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--lr", dest="learning_rate", type=float)
    tr.add_argument("--server", help="base URL of a running service")
    tr.set_defaults(func=cmd_train_decoder)

    rec = subs.add_parser("record-samples",
                          help="record (stack, delta) pairs from annotated video")
    rec.add_argument("--out", required=True, help="KMCS sample file to write")
    group = rec.add_mutually_exclusive_group(required=True)
    group.add_argument("--seq", help="one sequence directory")
    group.add_argument("--data", help="dataset root (record every sequence)")
    _add_config_flags(rec, with_decoder=False)
    rec.set_defaults(func=cmd_record)

    srv = subs.add_parser("serve", help="run the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    srv.set_defaults(func=cmd_serve)

    return parser


def _config_payload(args) -> dict:
    overrides = {}
    for key in ("features", "decoder", "adaptive_lr", "decoder_weights"):
        value = getattr(args, key, None)
        if value:
            overrides[key] = value
    return {"config_path": getattr(args, "config", None), "overrides": overrides}


def _post(server: str | None, path: str, payload: dict) -> httpx.Response:
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(path, json=payload)

    async def in_process():
        from .service.app import create_app

        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(transport=transport, timeout=None,
                                     base_url="http://service.local") as client:
            return await client.post(path, json=payload)

    return asyncio.run(in_process())


def _require_ok(resp: httpx.Response) -> dict:
    try:
        body = resp.json()
    except ValueError:
        body = {"detail": resp.text}
    if resp.status_code >= 400:
        detail = body.get("detail") or body.get("error") or resp.text
        print(f"error: {detail}", file=sys.stderr)
        raise SystemExit(EX_ERROR)
    return body


def _parse_box(text: str, parser_error) -> list[float]:
    parts = text.split(",")
    if len(parts) != 4:
        parser_error(f"--init-box needs x,y,w,h, got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        parser_error(f"--init-box needs numbers, got {text!r}")


def cmd_track(args, parser) -> int:
    payload = {
        "sequence_dir": args.seq,
        "out_dir": args.out,
        "seed": args.seed,
        "config": _config_payload(args),
    }
    if args.init_box:
        payload["init_box"] = _parse_box(args.init_box, parser.error)
    body = _require_ok(_post(args.server, "/track", payload))
    print(f"status={body['status']} frames={body['frames']}")
    if body.get("boxes_csv"):
        print(f"boxes: {body['boxes_csv']}")
    return EX_LOST if body["status"] == "tracking_lost" else EX_OK


def cmd_eval(args, parser) -> int:
    payload = {
        "dataset_dir": args.data,
        "out_dir": args.out,
        "seed": args.seed,
        "jobs": args.jobs,
        "config": _config_payload(args),
    }
    body = _require_ok(_post(args.server, "/eval", payload))
    for row in body["sequences"]:
        p20 = "-" if row["p20"] is None else f"{row['p20']:.4f}"
        auc = "-" if row["auc"] is None else f"{row['auc']:.4f}"
        print(f"{row['name']}: {row['status']} p20={p20} auc={auc}")
    if body["p20"] is not None:
        print(f"aggregate: p20={body['p20']:.4f} auc={body['auc']:.4f}")
    print(f"summary: {body['csv_paths']['summary']}")
    return EX_OK


def cmd_train_decoder(args, parser) -> int:
    if not args.samples and not args.synthetic:
        parser.error("provide --samples or --synthetic")
    train = {}
    if args.epochs is not None:
        train["max_epochs"] = args.epochs
    if args.batch_size is not None:
        train["batch_size"] = args.batch_size
    if args.learning_rate is not None:
        train["learning_rate"] = args.learning_rate
    payload = {
        "out_path": args.out,
        "samples_path": args.samples,
        "synthetic": args.synthetic,
        "layers": args.layers,
        "seed": args.seed,
        "train": train,
    }
    body = _require_ok(_post(args.server, "/train-decoder", payload))
    print(f"weights: {body['weights_path']} (epochs={body['epochs_run']})")
    print(f"validation rms: {body['best_val_rms']:.6f} "
          f"(maxres baseline: {body['maxres_val_rms']:.6f})")
    return EX_OK


def cmd_record(args, parser) -> int:
    payload = {
        "out_path": args.out,
        "sequence_dir": args.seq,
        "dataset_dir": args.data,
        "seed": args.seed,
        "config": _config_payload(args),
    }
    body = _require_ok(_post(args.server, "/record-samples", payload))
    print(f"wrote {body['samples_written']} samples to {body['out_path']}")
    return EX_OK


def cmd_serve(args, parser) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
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
    except httpx.HTTPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EX_ERROR
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EX_ERROR


if __name__ == "__main__":
    sys.exit(main())
