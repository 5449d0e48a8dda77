"""CLI: export backbone embeddings from an image folder to an FSEB store."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .backbones import SUPPORTED
from .export import ExportJob, export_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fseb-export",
                                     description="Pre-trained backbone embedding exporter")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="embed an image directory")
    p.add_argument("--backbone", required=True,
                   help=f"one of: {', '.join(SUPPORTED)}")
    p.add_argument("--in", dest="input_dir", required=True,
                   help="directory with one subfolder per class")
    p.add_argument("--out", required=True, help="output .fseb path")
    p.add_argument("--weights", choices=["pretrained", "random"],
                   default="pretrained",
                   help="published ImageNet weights, or a seeded random init "
                        "for offline use")
    p.add_argument("--seed", type=int, default=0, help="seed for random weights")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--manifest", default=None,
                   help="label manifest path (default: <out>.labels.json)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FSL_LOG", "INFO").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        job = ExportJob(backbone=args.backbone, input_dir=args.input_dir,
                        output_path=args.out, weights=args.weights,
                        seed=args.seed, batch_size=args.batch_size,
                        manifest_path=args.manifest)
        result = export_embeddings(job)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {result.count} embeddings (dim {result.dim}) to {args.out}; "
          f"{len(result.skipped)} skipped")
    return 0


if __name__ == "__main__":
    sys.exit(main())
