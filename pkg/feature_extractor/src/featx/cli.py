"""featx command line: batch feature extraction to FMAP files.

    featx extract --model diffusion --t 1 --block 3 --size 920 \
        --in images/ --out features/ --seed 0

--in accepts a directory (every image in it, sorted by name) or a single
image file. Each input <name>.<ext> produces <name>.fmap and, unless
--keypoints 0, <name>.keypoints.csv next to it in --out.

Exit codes: 0 on success, 1 on any error (bad arguments, unreadable
input, missing model dependencies or checkpoint).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backends import CheckpointError
from .extract import MODELS, ExtractorConfig, build_backend, extract_file
from .images import IMAGE_SUFFIXES


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; keep usage errors at 1
        raise CliError(f"{self.prog}: {message}")


def build_parser() -> _Parser:
    parser = _Parser(prog="featx", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("extract", help="write FMAP features for images")
    ex.add_argument("--model", choices=MODELS, default="diffusion")
    ex.add_argument("--t", type=int, default=1, help="noise time step (>= 1)")
    ex.add_argument("--block", type=int, default=3,
                    help="decoder block index, 1 (finest) to 4 (coarsest)")
    ex.add_argument("--size", type=int, default=920,
                    help="square working size in pixels")
    ex.add_argument("--seed", type=int, default=0, help="noise seed")
    ex.add_argument("--in", dest="in_path", required=True, metavar="PATH",
                    help="image directory or single image file")
    ex.add_argument("--out", dest="out_dir", required=True, metavar="DIR")
    ex.add_argument("--checkpoint", default=None,
                    help="diffusion checkpoint id or local path")
    ex.add_argument("--device", default="cpu")
    ex.add_argument("--conventional-noise", action="store_true",
                    help="scale noise by sqrt(1 - alpha_bar) instead of "
                         "(1 - alpha_bar)")
    ex.add_argument("--layer", default="relu5_4",
                    help="cnn model activation to capture")
    ex.add_argument("--untrained", action="store_true",
                    help="cnn model with seeded random weights (no download)")
    ex.add_argument("--keypoints", type=int, default=1000,
                    help="SIFT keypoints to export per image; 0 skips")
    ex.add_argument("--min-dist", type=float, default=10.0,
                    help="minimum distance between exported keypoints")
    return parser


def _input_files(in_path: Path) -> list[Path]:
    if in_path.is_file():
        return [in_path]
    if not in_path.is_dir():
        raise CliError(f"input path not found: {in_path}")
    files = sorted(p for p in in_path.iterdir()
                   if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise CliError(f"no image files in {in_path}")
    return files


def cmd_extract(args) -> int:
    try:
        cfg = ExtractorConfig(
            model=args.model,
            t=args.t,
            block=args.block,
            size=args.size,
            seed=args.seed,
            coefficient="sqrt" if args.conventional_noise else "linear",
            checkpoint=args.checkpoint,
            device=args.device,
            layer=args.layer,
            untrained=args.untrained,
            keypoints=args.keypoints,
            min_dist=args.min_dist,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc

    files = _input_files(Path(args.in_path))
    backend = build_backend(cfg)
    for path in files:
        written = extract_file(path, args.out_dir, cfg, backend)
        print(f"{path.name} -> {written['fmap'].name}"
              + (f", {written['keypoints'].name}" if "keypoints" in written else ""))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return cmd_extract(args)
    except (CliError, CheckpointError, OSError, ValueError) as exc:
        print(f"featx: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
