"""CLI: encode labeled images into a VEA1 anchor file.

    anchor-export export --manifest m.json --encoder vit-l-14-336 --out anchors.vea
"""

from __future__ import annotations

import argparse
import sys

from .encoders import ENCODERS, EncoderError, load_encoder
from .export import ManifestError, export, load_image_manifest


def cmd_export(args) -> int:
    manifest = load_image_manifest(args.manifest)
    encoder = load_encoder(args.encoder)
    summary = export(manifest, encoder, args.out, batch_size=args.batch_size)
    per_class = ", ".join(f"{name}={n}" for name, n in summary["classes"].items())
    print(
        f"wrote {summary['out']}: {len(summary['classes'])} classes "
        f"(d_anc={summary['d_anc']}, encoder {summary['encoder']}; {per_class})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anchor-export",
        description="Encode labeled face images with a frozen image encoder into an anchor file.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="encode a manifest of images into a VEA1 file")
    p.add_argument("--manifest", required=True, help="JSON: {class name: [image paths]}")
    p.add_argument(
        "--encoder",
        required=True,
        help=f"one of {', '.join(sorted(ENCODERS))}, or debug-hash-<dim> (offline stand-in)",
    )
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ManifestError, EncoderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
