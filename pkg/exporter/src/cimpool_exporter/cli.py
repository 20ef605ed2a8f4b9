"""Command-line entry points: cimpool-export and cimpool-fixture."""

from __future__ import annotations

import argparse
import json
import sys

from . import fixtures
from .export import ExportError, export_checkpoint, load_arch_file


def _emit(doc: dict, as_json: bool, text: str) -> None:
    if as_json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(text)


def export_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cimpool-export", description="export a torch checkpoint as a .cmodel tree"
    )
    parser.add_argument("checkpoint")
    parser.add_argument("-o", "--output", required=True, metavar="MODEL_CMODEL")
    parser.add_argument("--arch", help="layer list JSON (overrides any arch in the checkpoint)")
    parser.add_argument("--skip-unsupported", action="store_true",
                        help="drop unsupported operators instead of failing")
    parser.add_argument("--pool-seed", type=int, default=0)
    parser.add_argument("--act-bits", type=int, default=8)
    parser.add_argument("--json", action="store_true")
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        arch = load_arch_file(args.arch) if args.arch else None
        summary = export_checkpoint(
            args.checkpoint,
            args.output,
            arch=arch,
            skip_unsupported=args.skip_unsupported,
            pool_seed=args.pool_seed,
            activation_bits=args.act_bits,
        )
    except (ExportError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for label in summary["skipped"]:
        print(f"warning: skipped {label}", file=sys.stderr)
    _emit(
        summary,
        args.json,
        f"{summary['output']}: {len(summary['layers'])} layers, "
        f"{len(summary['skipped'])} skipped, stats in {summary['stats']}",
    )
    return 0


def fixture_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cimpool-fixture", description="write a seeded toy checkpoint and its export"
    )
    parser.add_argument("--arch", default="tinycnn", choices=list(fixtures.ARCHS))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("-o", "--output", default=".", metavar="DIR")
    parser.add_argument("--json", action="store_true")
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        paths = fixtures.make_fixture(args.arch, args.seed, args.output)
    except (ExportError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    _emit(paths, args.json, "\n".join(f"{k}: {v}" for k, v in paths.items()))
    return 0


if __name__ == "__main__":
    sys.exit(export_main())
