"""Command line: `imgfeatures extract --images DIR --out DIR [...]`."""

from __future__ import annotations

import argparse
import sys

from .extract import emit_synthetic_features, extract


def build_parser():
    parser = argparse.ArgumentParser(
        prog="imgfeatures",
        description="VGG19 content/style feature extraction",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="extract features for an image directory")
    p.add_argument("--images", help="directory of images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--weights", default="pretrained",
                   help="'pretrained', 'random', or a state-dict path")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--synthetic", action="store_true",
                   help="emit seeded random features instead of running the CNN")
    p.add_argument("--ids", help="file with one image id per line (synthetic mode)")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.synthetic:
            if not args.ids:
                print("error: --synthetic requires --ids FILE", file=sys.stderr)
                return 2
            with open(args.ids, encoding="utf-8") as fh:
                ids = [line.strip() for line in fh if line.strip()]
            manifest = emit_synthetic_features(ids, args.seed, args.out)
        else:
            if not args.images:
                print("error: extract requires --images DIR", file=sys.stderr)
                return 2
            manifest = extract(args.images, args.out, weights=args.weights,
                               batch_size=args.batch_size)
        print(f"wrote features for {len(manifest.image_ids)} images to {args.out}"
              + (f" ({len(manifest.failed)} failed)" if manifest.failed else ""))
        return 0
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
