"""Command-line entry points: synth, validate, metrics, preview.

Exit codes: 0 success, 1 usage or configuration problem, 2 dataset
validation failure, 3 external backend failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .catalog import CatalogError
from .dataset import DatasetFormatError
from .pipeline import (PipelineConfig, PipelineError, metrics_for_dataset,
                       preview_scene, synth, validate_dataset)
from .quality import MetricsError, write_metrics
from .relations import TransportError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_BACKEND = 3


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="scenesynth",
                     description="Procedural indoor point-cloud dataset synthesis.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a dataset from a config file")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=None, help="override master seed")
    p.add_argument("--scenes", type=int, default=None, help="override scene count")
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument("--parallelism", type=int, default=None, help="override worker count")

    p = sub.add_parser("validate", help="re-check every invariant of a stored dataset")
    p.add_argument("dataset", help="dataset root directory")

    p = sub.add_parser("metrics", help="compute quality metrics for a dataset")
    p.add_argument("dataset", help="dataset root directory")
    p.add_argument("--layout-backend", default=None, help="layout scoring endpoint URL")
    p.add_argument("--clusters", type=int, default=32, help="diversity cluster count")
    p.add_argument("--seed", type=int, default=0, help="clustering seed")

    p = sub.add_parser("preview", help="render a stored scene to a PNG")
    p.add_argument("scene", help="scene directory (contains points.ply)")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--view", default="top", choices=["top", "front", "side"])
    p.add_argument("--size", type=int, default=512, help="image size in pixels")
    return parser


def _cmd_synth(args) -> int:
    config = PipelineConfig.from_json(args.config, master_seed=args.seed,
                                      scene_count=args.scenes, output_dir=args.out,
                                      parallelism=args.parallelism)
    manifest, reports = synth(config)
    print(f"wrote {len(manifest.scenes)} scenes to {config.output_dir}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    problems = validate_dataset(args.dataset)
    for p in problems:
        print(f"VIOLATION: {p}")
    if problems:
        print(f"{len(problems)} violation(s) found")
        return EXIT_VALIDATION
    print("dataset valid")
    return EXIT_OK


def _cmd_metrics(args) -> int:
    report = metrics_for_dataset(args.dataset, clusters=args.clusters, seed=args.seed,
                                 layout_endpoint=args.layout_backend)
    out = Path(args.dataset) / "metrics.json"
    write_metrics(out, report)
    print(f"geometry_diversity_entropy: {report.geometry_diversity_entropy:.4f}")
    print(f"context_complexity: {report.context_complexity:.4f}")
    if report.layout_scores is not None:
        mean = report.mean_layout_score
        print(f"mean_layout_score: {'absent' if mean is None else f'{mean:.1f}'}")
        if mean is None:
            print("layout backend returned no scores", file=sys.stderr)
            return EXIT_BACKEND
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_preview(args) -> int:
    preview_scene(args.scene, args.out, view=args.view, image_size=args.size)
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"synth": _cmd_synth, "validate": _cmd_validate,
                "metrics": _cmd_metrics, "preview": _cmd_preview}
    try:
        return handlers[args.command](args)
    except TransportError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (PipelineError, CatalogError, DatasetFormatError, MetricsError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
