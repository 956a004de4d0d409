"""Command line front-end: `vitkeys export --images DIR --out DIR --model PATH`."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .export import DEFAULT_IMAGE_SIZE, export_features

IMAGE_SUFFIXES = {".ppm", ".pgm", ".pnm", ".png", ".jpg", ".jpeg", ".bmp"}


def cmd_export(args) -> int:
    images_dir = Path(args.images)
    if not images_dir.is_dir():
        print(f"error: not a directory: {images_dir}", file=sys.stderr)
        return 2
    paths = [p for p in sorted(images_dir.iterdir())
             if p.suffix.lower() in IMAGE_SUFFIXES]
    if not paths:
        print(f"error: no images under {images_dir}", file=sys.stderr)
        return 2
    manifest = export_features(paths, args.model, args.out,
                               image_size=args.image_size,
                               num_heads=args.heads)
    for image_id, message in sorted(manifest.errors.items()):
        print(f"error: {image_id}: {message}", file=sys.stderr)
    print(f"exported {len(manifest.entries)} tensors to {args.out} "
          f"({len(manifest.errors)} failed)")
    if not manifest.entries:
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitkeys",
        description="Export per-patch ViT key features as CTF1 tensors")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="run inference and write tensors")
    p.add_argument("--images", required=True, help="directory of images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--model", required=True, help="checkpoint path (.pth)")
    p.add_argument("--image-size", type=int, default=DEFAULT_IMAGE_SIZE)
    p.add_argument("--heads", type=int, default=None,
                   help="attention heads (default: embed_dim / 64)")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
