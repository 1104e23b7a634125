"""Command-line entry point for folder extraction."""

from __future__ import annotations

import argparse
import sys

from .config import ExtractorConfig
from .extract import extract_folder


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbextract", description=__doc__)
    parser.add_argument("--input", required=True, help="category folder (train/test layout)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--backbone", default="wide_resnet50_2")
    parser.add_argument("--layers", default="layer2,layer3", help="comma-separated stages")
    parser.add_argument("--resize", type=int, default=256)
    parser.add_argument("--crop", type=int, default=224)
    parser.add_argument("--neighborhood", type=int, default=3)
    parser.add_argument("--batch-size", type=int, default=4)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--limit", type=int, default=None,
                        help="cap images per split/class (miniature fixtures)")
    weights = parser.add_mutually_exclusive_group()
    weights.add_argument("--pretrained", dest="pretrained", action="store_true", default=True)
    weights.add_argument("--random-weights", dest="pretrained", action="store_false",
                         help="seeded untrained backbone (offline use, fixtures)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = ExtractorConfig(
        backbone=args.backbone,
        layers=[part for part in args.layers.split(",") if part],
        resize=args.resize,
        crop=args.crop,
        neighborhood=args.neighborhood,
        pretrained=args.pretrained,
        seed=args.seed,
        batch_size=args.batch_size,
        device=args.device,
        limit=args.limit,
    )
    try:
        manifests = extract_folder(args.input, args.out, config)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for split, path in sorted(manifests.items()):
        print(f"{split}_manifest: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
