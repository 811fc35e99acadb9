"""Entry point: ``serve`` runs the stdio request loop, ``embed-batch``
precomputes descriptors offline. Exit codes: 0 clean shutdown, 1 model
load failure, 2 batch input failure."""

from __future__ import annotations

import argparse
import json
import sys

from .batch import BatchError, embed_batch, read_manifest_paths
from .models import ModelLoadError, load_model
from .server import serve


def _parse_fill(text: str) -> tuple[int, int, int]:
    parts = tuple(int(v) for v in text.split(","))
    if len(parts) != 3 or any(not 0 <= v <= 255 for v in parts):
        raise argparse.ArgumentTypeError(f"bad fill {text!r}; expected R,G,B bytes")
    return parts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="verilime-bridge",
        description="Serve image embeddings over a line-delimited JSON stdio protocol.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    serve_cmd = commands.add_parser("serve", help="run the stdio request loop")
    serve_cmd.add_argument(
        "--model", default="dummy",
        help="model spec: dummy[:dim=64,seed=0] or torchscript:path=<file>[,size=...]",
    )
    serve_cmd.add_argument(
        "--preferred-fill", type=_parse_fill, default=None,
        help="fill triple to advertise in the hello reply, e.g. 104,117,124",
    )

    batch_cmd = commands.add_parser("embed-batch", help="write an .emb batch file")
    batch_cmd.add_argument("--model", default="dummy")
    batch_cmd.add_argument(
        "--manifest", required=True,
        help="dataset manifest JSON (subjects/images) or newline-separated image paths",
    )
    batch_cmd.add_argument("--out", required=True, help="output .emb path")
    batch_cmd.add_argument(
        "--no-flip-average", dest="flip_average", action="store_false",
        help="store raw embeddings instead of flip-averaged descriptors",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        model = load_model(args.model)
    except ModelLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.command == "serve":
        return serve(model, sys.stdin, sys.stdout, preferred_fill=args.preferred_fill)

    try:
        paths = read_manifest_paths(args.manifest)
        report = embed_batch(model, paths, args.out, flip_average=args.flip_average)
    except BatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report))
    return 0


if __name__ == "__main__":
    sys.exit(main())
