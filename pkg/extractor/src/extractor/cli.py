"""Command line entry point: one model, one image directory, one dump."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ExtractionError
from .runner import ExtractionJob, run_extraction


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extract",
        description=(
            "Dump penultimate-layer activations of a vision model over an "
            "image directory as float32 NPY plus a manifest entry."
        ),
    )
    parser.add_argument("--model", required=True, help="registry model id")
    parser.add_argument(
        "--images", required=True, help="directory of input images"
    )
    parser.add_argument(
        "--out", required=True, help="output directory (NPY + manifest.json)"
    )
    parser.add_argument(
        "--layer",
        default=None,
        help="explicit module path whose input to capture (overrides the "
        "per-family default)",
    )
    parser.add_argument(
        "--batch", type=int, default=16, help="inference batch size"
    )
    parser.add_argument(
        "--untrained",
        action="store_true",
        help="skip pretrained weights (random init); for offline smoke runs",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s"
    )
    args = build_parser().parse_args(argv)
    job = ExtractionJob(
        model_id=args.model,
        image_dir=Path(args.images),
        out_dir=Path(args.out),
        layer=args.layer,
        batch_size=args.batch,
        pretrained=not args.untrained,
    )
    try:
        result = run_extraction(job)
    except ExtractionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        f"model={result.model_id} layer={result.layer} "
        f"images={result.shape[0]} skipped={len(result.skipped)} "
        f"dims={result.shape[1]} features={result.features_path}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
