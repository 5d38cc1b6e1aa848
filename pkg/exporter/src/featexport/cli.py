"""Command line: ``featexport export`` and ``featexport verify``."""

import argparse
import sys
from pathlib import Path

from .backbone import DEFAULT_TAPS, TapNotFoundError
from .export import ExportSpec, export, verify_export


def cmd_export(args):
    spec = ExportSpec(
        image_dir=Path(args.images), out_dir=Path(args.out),
        backbone=args.backbone,
        weights_path=Path(args.weights) if args.weights else None,
        taps=(args.tap1, args.tap2), image_size=args.image_size,
        seed=args.seed,
        split_file=Path(args.split_file) if args.split_file else None)
    manifest_path = export(spec)
    print(f"manifest written: {manifest_path}")
    return 0


def cmd_verify(args):
    report = verify_export(args.manifest)
    for cls in sorted(report.per_class):
        print(f"{cls}: {report.per_class[cls]} samples")
    if not report.ok:
        for problem in report.problems:
            print(f"problem: {problem}", file=sys.stderr)
        print(f"verification failed with {len(report.problems)} problem(s)",
              file=sys.stderr)
        return 1
    print("export verified")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="featexport",
        description="extract two intermediate backbone activations per image "
                    "into FTS1 tensors plus a dataset manifest")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="run a class-per-folder image corpus")
    p.add_argument("--images", required=True, help="directory of class folders")
    p.add_argument("--out", required=True)
    p.add_argument("--backbone", default="resnet50")
    p.add_argument("--weights", default=None, help="local state-dict path; "
                   "random init from --seed when omitted")
    p.add_argument("--tap1", default=DEFAULT_TAPS[0])
    p.add_argument("--tap2", default=DEFAULT_TAPS[1])
    p.add_argument("--image-size", type=int, default=224)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-file", default=None,
                   help="JSON mapping sample id or image name to train/test")
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("verify", help="re-read an export and check it")
    p.add_argument("--manifest", required=True)
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TapNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
