"""Command-line interface.

Subcommands: register (one pair or a whole manifest), evaluate (metrics,
delimited report, figures), synth (ground-truth benchmark generation),
filters-debug (correspondence dumps). Exit codes: 0 success, 2 when a
registration legitimately fails (too few surviving correspondences),
1 for I/O, format, or configuration errors.

Configuration precedence, lowest to highest: built-in defaults, --preset,
--config file, explicit command-line flags. Config files hold one
"key = value" per line with '#' comments. The REG_LOG environment
variable (DEBUG/INFO/WARNING/ERROR) controls log verbosity.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import math
import os
import sys
from pathlib import Path

from .evaluation import (
    EvaluationThresholds,
    ManifestEntry,
    SYNTHETIC_KINDS,
    evaluate_dataset,
    generate_synthetic_pair,
    load_landmarks,
    read_manifest,
    save_landmarks,
    synthetic_feature_grids,
    synthetic_texture,
    write_manifest,
)
from .figures import save_accuracy_curve, save_overlay, save_pair_errors
from .filtering import inverse_consistency_filter, transform_residual_filter
from .keypoints import load_keypoints_file, sample_random_keypoints
from .matching import correlation_rows, dump_correlation_row, match_bidirectional
from .model import (
    RegistrationConfig,
    RegistrationError,
    load_transform,
    save_transform,
)
from .pipeline import PairInputs, register_pair
from .tensor_io import (
    FmapError,
    UnsupportedImageError,
    l2_normalize_channels,
    load_image,
    read_fmap,
    resample_image,
)
from .transforms import TransformChain, compose, rescale_transform, warp_image

log = logging.getLogger(__name__)

# per-dataset bundles: resample size, stage thresholds, evaluation T_AUC
PRESETS = {
    "fire": {"resample_size": "920", "t_trans_stage1": "25",
             "t_trans_stage2": "15", "t_auc": "25"},
    "flori21": {"resample_size": "1024", "t_trans_stage1": "40",
                "t_trans_stage2": "30", "t_auc": "100"},
    "lsfg": {"resample_size": "740", "t_trans_stage1": "25",
             "t_trans_stage2": "25", "t_auc": "25"},
}

CONFIG_FIELDS = (
    "resample_size", "keypoints_per_sampler", "min_keypoint_dist", "t_ic",
    "t_trans_stage1", "t_trans_stage2", "stage1_kind", "stage2_kind",
    "outlier_fit_kind", "feature_source", "rng_seed", "correlation_resolution",
)


class CliError(Exception):
    """User-facing configuration or I/O problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep exit code 1 for usage problems
        raise CliError(f"{self.prog}: {message}")


def parse_config_file(path) -> dict:
    """One "key = value" per line; '#' starts a comment."""
    values: dict = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise CliError(f"{path}:{lineno}: empty key")
        values[key] = value.strip()
    return values


def _merge_settings(args) -> dict:
    """Preset, then config file, then explicit flags."""
    merged: dict = {}
    preset = getattr(args, "preset", None)
    if preset:
        merged.update(PRESETS[preset])
    config = getattr(args, "config", None)
    if config:
        merged.update(parse_config_file(config))
    for field in CONFIG_FIELDS + ("t_auc",):
        value = getattr(args, field, None)
        if value is not None:
            merged[field] = str(value)
    return merged


def build_registration_config(args) -> RegistrationConfig:
    merged = _merge_settings(args)
    merged.pop("t_auc", None)  # evaluation-only knob
    try:
        return RegistrationConfig.from_mapping(merged)
    except (ValueError, TypeError) as exc:
        raise CliError(f"bad configuration: {exc}")


def _resolve_t_auc(args) -> int:
    merged = _merge_settings(args)
    raw = merged.get("t_auc")
    if raw is None:
        raise CliError("t_auc is required (flag --t-auc, config key, or --preset)")
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"t_auc must be an integer, got {raw!r}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help="named dataset parameter bundle")
    p.add_argument("--resample-size", dest="resample_size")
    p.add_argument("--keypoints-per-sampler", dest="keypoints_per_sampler")
    p.add_argument("--min-keypoint-dist", dest="min_keypoint_dist")
    p.add_argument("--t-ic", dest="t_ic")
    p.add_argument("--t-trans-stage1", dest="t_trans_stage1")
    p.add_argument("--t-trans-stage2", dest="t_trans_stage2")
    p.add_argument("--stage1-kind", dest="stage1_kind")
    p.add_argument("--stage2-kind", dest="stage2_kind")
    p.add_argument("--outlier-fit-kind", dest="outlier_fit_kind")
    p.add_argument("--feature-source", dest="feature_source")
    p.add_argument("--seed", "--rng-seed", dest="rng_seed")
    p.add_argument("--correlation-resolution", dest="correlation_resolution")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="featreg",
                     description="Feature-based two-stage image registration")
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("register", help="register one pair or a manifest")
    reg.add_argument("--fixed")
    reg.add_argument("--moving")
    reg.add_argument("--fixed-fmap")
    reg.add_argument("--moving-fmap")
    reg.add_argument("--stage2-fmap")
    reg.add_argument("--features-dir",
                     help="directory holding <pair_id>.<role>.fmap files")
    reg.add_argument("--pair-id", help="pair id for --features-dir discovery")
    reg.add_argument("--keypoints", help="external keypoints file (resampled coords)")
    reg.add_argument("--out", help="output transform file (single-pair mode)")
    reg.add_argument("--manifest", help="register every pair in this manifest")
    reg.add_argument("--results-dir", help="output directory (manifest mode)")
    reg.add_argument("--jobs", type=int, default=1)
    reg.add_argument("--overlay", help="write a green/magenta overlay PNG here")
    reg.add_argument("--warped", help="write the deformed moving image here")
    reg.add_argument("--json", action="store_true")
    _add_config_flags(reg)
    reg.add_argument("--t-auc", dest="t_auc", help=argparse.SUPPRESS)

    ev = sub.add_parser("evaluate", help="metrics over registered results")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--results-dir", required=True)
    ev.add_argument("--out-dir", help="report output directory (default: results dir)")
    ev.add_argument("--t-auc", dest="t_auc")
    ev.add_argument("--no-figures", action="store_true")
    ev.add_argument("--json", action="store_true")
    _add_config_flags(ev)

    sy = sub.add_parser("synth", help="generate ground-truth benchmark pairs")
    sy.add_argument("--kind", required=True, choices=SYNTHETIC_KINDS)
    sy.add_argument("--count", required=True, type=int)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--out-dir", required=True)
    sy.add_argument("--base-image", help="texture source instead of the generator")
    sy.add_argument("--size", type=int, default=256,
                    help="synthetic image side length")
    sy.add_argument("--grid", type=int, default=128,
                    help="feature grid side length")
    sy.add_argument("--channels", type=int, default=32)
    sy.add_argument("--warp-amp", type=float, default=6.0)
    sy.add_argument("--landmark-grid", type=int, default=10)
    sy.add_argument("--no-features", action="store_true",
                    help="skip the analytic feature grids")

    fd = sub.add_parser("filters-debug",
                        help="dump matches, filter outcomes, correlation rows")
    fd.add_argument("--fixed-fmap", required=True)
    fd.add_argument("--moving-fmap", required=True)
    fd.add_argument("--keypoints", help="points file; default: random points")
    fd.add_argument("--count", type=int, default=64,
                    help="random point count when no file is given")
    fd.add_argument("--indices", default="",
                    help="comma-separated point indices to dump as FMAP rows")
    fd.add_argument("--out-dir", required=True)
    fd.add_argument("--resolution", default="full",
                    choices=("full", "feature_native"))
    fd.add_argument("--image-size", type=int,
                    help="image frame side for feature_native")
    fd.add_argument("--t-ic", dest="t_ic", type=float, default=3.0)
    fd.add_argument("--t-trans", dest="t_trans", type=float, default=25.0)
    fd.add_argument("--seed", type=int, default=0)
    return parser


# ---------------------------------------------------------------------------
# register

def _stage2_path(out: Path) -> Path:
    stem = out.stem
    if stem.endswith(".stage1"):
        stem = stem[: -len(".stage1")]
    return out.with_name(stem + ".stage2" + (out.suffix or ".txt"))


def _discover_fmaps(args) -> tuple:
    if args.fixed_fmap and args.moving_fmap:
        return args.fixed_fmap, args.moving_fmap, args.stage2_fmap
    if args.features_dir:
        if not args.pair_id:
            raise CliError("--features-dir needs --pair-id")
        d = Path(args.features_dir)
        fixed = d / f"{args.pair_id}.fixed.fmap"
        moving = d / f"{args.pair_id}.moving.fmap"
        stage2 = d / f"{args.pair_id}.stage2.fmap"
        return str(fixed), str(moving), (
            args.stage2_fmap or (str(stage2) if stage2.exists() else None))
    raise CliError("need --fixed-fmap/--moving-fmap or --features-dir")


def _write_result_files(result, out: Path, diagnostics_path: Path) -> dict:
    written = {"diagnostics": str(diagnostics_path)}
    out.parent.mkdir(parents=True, exist_ok=True)
    if result.succeeded:
        save_transform(result.stage1, out)
        written["stage1"] = str(out)
        if result.stage2 is not None:
            s2 = _stage2_path(out)
            save_transform(result.stage2, s2)
            written["stage2"] = str(s2)
    diagnostics_path.write_text(
        json.dumps(result.diagnostics, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    return written


def _render_warp_outputs(args, result) -> None:
    if not (args.overlay or args.warped) or not result.succeeded:
        return
    fixed = load_image(args.fixed)
    moving = load_image(args.moving)
    warped = warp_image(moving, result.total, fixed.width, fixed.height)
    if args.warped:
        from .tensor_io import save_image
        save_image(warped, args.warped)
    if args.overlay:
        save_overlay(fixed, warped, args.overlay)


def _register_one(job) -> tuple:
    pair_id, inputs, cfg, out, diag_path = job
    result = register_pair(inputs, cfg)
    written = _write_result_files(result, Path(out), Path(diag_path))
    return pair_id, result.status, result.diagnostics.get("seconds", 0.0), written


def cmd_register(args) -> int:
    cfg = build_registration_config(args)
    if args.manifest:
        if not args.results_dir:
            raise CliError("manifest mode needs --results-dir")
        if not args.features_dir:
            raise CliError("manifest mode needs --features-dir")
        entries = read_manifest(args.manifest)
        base = Path(args.manifest).parent
        results_dir = Path(args.results_dir)
        results_dir.mkdir(parents=True, exist_ok=True)
        fdir = Path(args.features_dir)
        jobs = []
        for e in entries:
            stage2 = fdir / f"{e.pair_id}.stage2.fmap"
            inputs = PairInputs(
                fixed_image=str(base / e.fixed_path),
                moving_image=str(base / e.moving_path),
                fixed_fmap=str(fdir / f"{e.pair_id}.fixed.fmap"),
                moving_fmap=str(fdir / f"{e.pair_id}.moving.fmap"),
                stage2_moving_fmap=str(stage2) if stage2.exists() else None,
                external_keypoints=args.keypoints,
            )
            jobs.append((e.pair_id, inputs, cfg,
                         results_dir / f"{e.pair_id}.stage1.txt",
                         results_dir / f"{e.pair_id}.json"))
        outcomes = []
        if args.jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
                outcomes = list(pool.map(_register_one, jobs))
        else:
            outcomes = [_register_one(j) for j in jobs]
        failed = [pid for pid, status, _, _ in outcomes if status != "success"]
        summary = {
            "pairs": len(outcomes),
            "succeeded": len(outcomes) - len(failed),
            "failed": failed,
            "results_dir": str(results_dir),
        }
        if args.json:
            print(json.dumps(summary, sort_keys=True))
        else:
            print(f"registered {summary['succeeded']}/{summary['pairs']} pairs"
                  + (f"; failed: {', '.join(failed)}" if failed else ""))
        return 2 if failed else 0

    for flag in ("fixed", "moving", "out"):
        if not getattr(args, flag):
            raise CliError(f"single-pair mode needs --{flag}")
    fixed_fmap, moving_fmap, stage2_fmap = _discover_fmaps(args)
    inputs = PairInputs(args.fixed, args.moving, fixed_fmap, moving_fmap,
                        stage2_fmap, args.keypoints)
    result = register_pair(inputs, cfg)
    out = Path(args.out)
    written = _write_result_files(result, out, out.with_suffix(".json"))
    _render_warp_outputs(args, result)
    if args.json:
        print(json.dumps({"status": result.status, "files": written,
                          "diagnostics": result.diagnostics}, sort_keys=True))
    else:
        print(f"{result.status}: " + ", ".join(sorted(written.values())))
    return 0 if result.succeeded else 2


# ---------------------------------------------------------------------------
# evaluate

def _load_pair_transform(results_dir: Path, pair_id: str):
    """Stage files -> composite in original coordinates, or None."""
    s1_path = results_dir / f"{pair_id}.stage1.txt"
    if not s1_path.exists():
        return None, "missing result"
    diag_path = results_dir / f"{pair_id}.json"
    if diag_path.exists():
        try:
            status = json.loads(diag_path.read_text(encoding="utf-8")).get("status")
            if status and status != "success":
                return None, status
        except (OSError, json.JSONDecodeError):
            pass
    s1 = load_transform(s1_path)
    s2_path = results_dir / f"{pair_id}.stage2.txt"
    if s2_path.exists():
        return compose(s1, load_transform(s2_path)), None
    return s1, None


def _pair_seconds(results_dir: Path, pair_id: str):
    diag = results_dir / f"{pair_id}.json"
    if diag.exists():
        try:
            value = json.loads(diag.read_text(encoding="utf-8")).get("seconds")
            return float(value) if value is not None else None
        except (OSError, json.JSONDecodeError, TypeError, ValueError):
            return None
    return None


def cmd_evaluate(args) -> int:
    t_auc = _resolve_t_auc(args)
    thresholds = EvaluationThresholds(t_auc)
    entries = read_manifest(args.manifest)
    base = Path(args.manifest).parent
    results_dir = Path(args.results_dir)
    transforms, landmarks, notes = [], [], {}
    for e in entries:
        t, note = _load_pair_transform(results_dir, e.pair_id)
        if note:
            notes[e.pair_id] = note
        transforms.append(t)
        landmarks.append(load_landmarks(base / e.landmarks_path))
    pair_ids = [e.pair_id for e in entries]
    categories = [e.category for e in entries] \
        if any(e.category for e in entries) else None
    timings = [_pair_seconds(results_dir, p) for p in pair_ids]
    timings = timings if all(t is not None for t in timings) else None
    report = evaluate_dataset(transforms, landmarks, thresholds,
                              pair_ids=pair_ids, categories=categories,
                              timings=timings)
    out_dir = Path(args.out_dir) if args.out_dir else results_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    doc = report.as_dict()
    if notes:
        doc["notes"] = notes
    (out_dir / "report.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(out_dir / "report.csv", "w", encoding="utf-8") as fh:
        fh.write("pair_id,category,mle,success\n")
        for i, (pid, mle) in enumerate(zip(report.pair_ids, report.mles)):
            cat = categories[i] if categories else ""
            mle_txt = "" if math.isinf(mle) else f"{mle:.6g}"
            ok = "true" if mle <= thresholds.t_sr else "false"
            fh.write(f"{pid},{cat},{mle_txt},{ok}\n")
    if not args.no_figures:
        save_accuracy_curve(report.mles, t_auc, report.auc,
                            out_dir / "accuracy_curve.png")
        save_pair_errors(report.pair_ids, report.mles, thresholds.t_sr,
                         out_dir / "pair_errors.png")
    if args.json:
        print(json.dumps(doc, sort_keys=True))
    else:
        print(report.format_table())
        if notes:
            print("\nunregistered pairs: "
                  + ", ".join(f"{k} ({v})" for k, v in sorted(notes.items())))
    return 0


# ---------------------------------------------------------------------------
# synth

def _save_ground_truth(t, out_dir: Path, pair_id: str) -> None:
    if isinstance(t, TransformChain):
        # composition order: total(u) = stage1(stage2(u))
        inner, outer = t.members
        save_transform(outer, out_dir / f"{pair_id}.gt.stage1.txt")
        save_transform(inner, out_dir / f"{pair_id}.gt.stage2.txt")
    else:
        save_transform(t, out_dir / f"{pair_id}.gt.txt")


def cmd_synth(args) -> int:
    if args.count < 0:
        raise CliError("--count must be non-negative")
    from .tensor_io import save_image, write_fmap
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    size = args.size
    base_img = None
    if args.base_image:
        base_img = resample_image(load_image(args.base_image), size, size)
    entries = []
    for i in range(args.count):
        pair_id = f"{args.kind}_{i:03d}"
        seed = args.seed + i
        base = base_img if base_img is not None \
            else synthetic_texture(size, size, seed=100_000 + seed)
        pair = generate_synthetic_pair(base, args.kind, seed=seed,
                                       warp_amp=args.warp_amp,
                                       landmark_grid=args.landmark_grid)
        save_image(pair.fixed, out_dir / f"{pair_id}.fixed.png")
        save_image(pair.moving, out_dir / f"{pair_id}.moving.png")
        save_landmarks(pair.landmarks, out_dir / f"{pair_id}.landmarks.csv")
        _save_ground_truth(pair.ground_truth, out_dir, pair_id)
        if not args.no_features:
            fixed_fm, moving_fm = synthetic_feature_grids(
                pair.ground_truth, (size, size), grid=args.grid,
                channels=args.channels, seed=200_000 + seed)
            write_fmap(fixed_fm, out_dir / f"{pair_id}.fixed.fmap")
            write_fmap(moving_fm, out_dir / f"{pair_id}.moving.fmap")
        entries.append(ManifestEntry(
            pair_id=pair_id,
            fixed_path=f"{pair_id}.fixed.png",
            moving_path=f"{pair_id}.moving.png",
            landmarks_path=f"{pair_id}.landmarks.csv",
            category=args.kind,
        ))
        log.info("synth %s: %d landmarks", pair_id, len(pair.landmarks))
    write_manifest(entries, out_dir / "manifest.csv")
    print(f"wrote {len(entries)} pairs to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# filters-debug

def cmd_filters_debug(args) -> int:
    fixed_fm = l2_normalize_channels(read_fmap(args.fixed_fmap))
    moving_fm = l2_normalize_channels(read_fmap(args.moving_fmap))
    _, h, w = fixed_fm.data.shape
    if args.resolution == "feature_native":
        if not args.image_size:
            raise CliError("feature_native needs --image-size")
        frame = (args.image_size, args.image_size)
    else:
        frame = (w, h)
    if args.keypoints:
        points = load_keypoints_file(args.keypoints)
    else:
        points = sample_random_keypoints(frame[0], frame[1], args.count,
                                         seed=args.seed)
    corrs = match_bidirectional(fixed_fm, moving_fm, points,
                                args.resolution, frame)
    after_ic = inverse_consistency_filter(corrs, args.t_ic)
    residual_error = None
    filtered = after_ic
    try:
        filtered, _ = transform_residual_filter(after_ic, "affine", args.t_trans)
    except RegistrationError as exc:
        residual_error = f"{type(exc).__name__}: {exc}"
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(len(points)):
        rows.append({
            "index": i,
            "fixed": [float(v) for v in corrs.fixed_xy[i]],
            "moving": [float(v) for v in corrs.moving_xy[i]],
            "back": [float(v) for v in corrs.back_xy[i]],
            "similarity": float(corrs.similarity[i]),
            "status": int(filtered.status[i]),
        })
    doc = {
        "points": len(points),
        "kept_after_ic": int(after_ic.active_count),
        "kept_after_residual": int(filtered.active_count),
        "t_ic": args.t_ic,
        "t_trans": args.t_trans,
        "residual_filter_error": residual_error,
        "correspondences": rows,
    }
    (out_dir / "filters.json").write_text(
        json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    indices = [int(s) for s in args.indices.split(",") if s.strip()]
    for row in correlation_rows(fixed_fm, moving_fm, points, indices,
                                args.resolution, frame):
        dump_correlation_row(row, out_dir / f"row_{row.point_index:04d}.fmap")
    print(f"points {len(points)}, after IC {after_ic.active_count}, "
          f"after residual {filtered.active_count}"
          + (f" (residual filter failed: {residual_error})" if residual_error else ""))
    return 0


# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    level = os.environ.get("REG_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "register": cmd_register,
            "evaluate": cmd_evaluate,
            "synth": cmd_synth,
            "filters-debug": cmd_filters_debug,
        }[args.command]
        return handler(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, FmapError, UnsupportedImageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
