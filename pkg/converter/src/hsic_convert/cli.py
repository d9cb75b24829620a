"""hsic-convert: turn MATLAB-container HSI scenes into HSIC files."""

from __future__ import annotations

import argparse
import os
import sys

from .convert import ConversionError, convert, verify
from .hsic import HsicError
from .manifest import ManifestError, load_manifest
from .matreader import MatReadError


def _manifest_path(name):
    """Accept a path or the bare name of a shipped manifest."""
    if os.path.exists(name):
        return name
    shipped = os.path.join(os.path.dirname(__file__), "manifests", f"{name}.json")
    if os.path.exists(shipped):
        return shipped
    raise FileNotFoundError(f"no manifest file or shipped manifest named {name!r}")


def cmd_convert(args):
    manifest = load_manifest(_manifest_path(args.manifest))
    if args.source_dir:
        manifest.cube_path = os.path.join(args.source_dir, manifest.cube_path)
        manifest.gt_path = os.path.join(args.source_dir, manifest.gt_path)
    if args.output:
        manifest.output = args.output
    convert(manifest)
    return 0


def cmd_verify(args):
    manifest = load_manifest(_manifest_path(args.manifest))
    problems = verify(args.hsic, manifest)
    return 1 if problems else 0


def cmd_manifests(args):
    shipped = os.path.join(os.path.dirname(__file__), "manifests")
    for name in sorted(os.listdir(shipped)):
        print(name[: -len(".json")])
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="hsic-convert",
                                     description="MATLAB-container HSI scenes -> HSIC")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert per a manifest")
    p.add_argument("manifest", help="manifest path, or a shipped manifest name")
    p.add_argument("--source-dir", help="directory holding the source .mat files")
    p.add_argument("--output", help="override the manifest's output path")
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("verify", help="check an HSIC file against a manifest")
    p.add_argument("hsic")
    p.add_argument("manifest")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("manifests", help="list shipped dataset manifests")
    p.set_defaults(fn=cmd_manifests)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ManifestError, ConversionError, MatReadError, HsicError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
