"""cnts-export: export and verify checkpoint conversions.

Exit codes: 0 success, 1 failed verification or conversion error,
2 usage/path error.
"""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, export, load_manifest, verify


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cnts-export",
        description="Convert array-archive checkpoints (.npz) into CNTS v1 snapshots.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="write a CNTS file per the manifest")
    p.add_argument("manifest", help="manifest JSON (source, meta, layer mappings)")
    p.add_argument("-o", "--out", required=True, help="output .cnts path")

    p = sub.add_parser("verify", help="compare an exported file against its source")
    p.add_argument("cnts", help="exported .cnts file")
    p.add_argument("manifest", help="the manifest used for the export")

    args = parser.parse_args(argv)
    try:
        manifest = load_manifest(args.manifest)
        if args.command == "export":
            out = export(manifest, args.out)
            print(f"wrote {out}")
            return 0
        report = verify(args.cnts, manifest)
        for entry in report["tensors"]:
            print(f"{entry['name']}: max deviation {entry['max_deviation']:.3e}")
        print("verification:", "OK" if report["ok"] else "FAIL")
        return 0 if report["ok"] else 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ExportError as e:
        message = str(e)
        print(f"error: {message}", file=sys.stderr)
        return 2 if "not found" in message or "cannot read" in message else 1


if __name__ == "__main__":
    sys.exit(main())
