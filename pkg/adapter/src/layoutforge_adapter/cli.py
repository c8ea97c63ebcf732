"""Command line front end.

    adapter extract <image> --out <dir> [--replay cache/]
                    [--record cache/] [--config config.json]

Exit codes: 0 when the bundle is complete, 2 for unreadable inputs,
3 when one or more model stages failed and the bundle is partial (the
missing pieces are listed in ``missing.json`` and on stderr).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .errors import AdapterError
from .extract import extract_bundle

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PARTIAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adapter",
        description="Extract a scene bundle from an RGB image via vision models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    ex = sub.add_parser("extract", help="run all model stages on one image")
    ex.add_argument("image", type=Path, help="input RGB image")
    ex.add_argument("--out", required=True, type=Path,
                    help="bundle directory to write")
    ex.add_argument("--replay", type=Path, default=None,
                    help="serve model calls from this response cache")
    ex.add_argument("--record", type=Path, default=None,
                    help="capture live responses into this cache directory")
    ex.add_argument("--config", type=Path, default=None,
                    help="JSON file with endpoints, intrinsics, prompt overrides")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.out, args.replay, args.record)
        report = extract_bundle(args.image, config)
    except AdapterError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if report.complete:
        print(
            f"bundle with {report.mask_count} masks written to {report.out}",
            file=sys.stderr,
        )
        return EXIT_OK
    for item in report.missing:
        print(
            f"missing {item['part']} ({item['model']}: {item['reason']})",
            file=sys.stderr,
        )
    print(f"partial bundle written to {report.out}", file=sys.stderr)
    return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
