"""Command-line interface: one subcommand per pipeline stage plus a
synthetic-workspace generator."""

from __future__ import annotations

import argparse
import os
import sys

from . import pipeline
from .errors import NumericalError, ValidationError
from .fixtures import write_fixture_workspace


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", default=None, help="config JSON (default: workspace/config.json)"
    )
    parser.add_argument(
        "--workspace",
        default=None,
        help=f"workspace root (default: ${pipeline.WORKSPACE_ENV} or config dir)",
    )
    parser.add_argument(
        "--jobs", type=int, default=1, help="parallel worker processes"
    )
    parser.add_argument(
        "--force", action="store_true", help="recompute even if up to date"
    )
    parser.add_argument(
        "--seed", type=int, default=None, help="override the run seed"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unidim",
        description=(
            "Shared-dimension analysis of model representations: RBF "
            "similarity, symmetric NMF, null-calibrated dimension matching, "
            "content and alignment evaluation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "kernel": "compute RBF similarity matrices over the bandwidth grid",
        "factorize": "fit seeded factorizations and select the bandwidth",
        "universality": "match dimensions across models and calibrate scores",
        "content": "relate dimensions to category structure",
        "align": "evaluate embeddings against neural and behavioral data",
        "contrast": "run pre-specified model-group comparisons",
        "report": "merge stage outputs into plot-ready tables",
    }
    for name in pipeline.STAGES:
        stage_parser = sub.add_parser(name, help=helps[name])
        _add_common(stage_parser)
    fixtures_parser = sub.add_parser(
        "fixtures", help="generate a synthetic planted-structure workspace"
    )
    _add_common(fixtures_parser)
    fixtures_parser.add_argument("--models", type=int, default=10)
    fixtures_parser.add_argument("--categories", type=int, default=50)
    fixtures_parser.add_argument("--images-per-category", type=int, default=6)
    fixtures_parser.add_argument("--rank", type=int, default=8)
    fixtures_parser.add_argument(
        "--fit-seeds", type=int, default=3, help="restarts per bandwidth"
    )
    fixtures_parser.add_argument("--permutations", type=int, default=200)
    fixtures_parser.add_argument("--triplets", type=int, default=400)
    return parser


def _run(args: argparse.Namespace) -> int:
    if args.command == "fixtures":
        workspace = args.workspace or os.environ.get(pipeline.WORKSPACE_ENV)
        if workspace is None:
            raise ValidationError(
                f"--workspace or ${pipeline.WORKSPACE_ENV} is required "
                "to generate fixtures"
            )
        seed = args.seed if args.seed is not None else 20260815
        paths = write_fixture_workspace(
            workspace,
            n_models=args.models,
            n_categories=args.categories,
            images_per_category=args.images_per_category,
            rank=args.rank,
            seeds=args.fit_seeds,
            permutations=args.permutations,
            n_triplets=args.triplets,
            rng_seed=seed,
        )
        print(f"fixtures written: config={paths['config']}")
        return 0
    ctx = pipeline.load_context(
        args.config,
        workspace=args.workspace,
        seed=args.seed,
        jobs=args.jobs,
        force=args.force,
    )
    summary = pipeline.STAGE_RUNNERS[args.command](ctx)
    print(" ".join(f"{key}={value}" for key, value in summary.items()))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
