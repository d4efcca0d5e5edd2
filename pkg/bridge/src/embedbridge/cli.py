"""Command line for the extraction bridge.

Exit codes: 0 success, 1 data/validation error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .manifest import ExtractionManifest
from .extract import extract
from .registry import REGISTRY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embedbridge",
        description="Run a face-recognition extractor over aligned images and "
                    "write embeddings in the canonical EMB1 format.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run an extraction manifest")
    p.add_argument("--manifest", required=True, help="key=value manifest file")

    sub.add_parser("models", help="list registry model ids")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "models":
        for name in sorted(REGISTRY):
            spec = REGISTRY[name]
            print(f"{name}: family={spec.family} dim={spec.dim} "
                  f"input={spec.input_size}x{spec.input_size}")
        return 0
    try:
        manifest = ExtractionManifest.from_file(args.manifest)
        summary = extract(manifest)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary.__dict__, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
