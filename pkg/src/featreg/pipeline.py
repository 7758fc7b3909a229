"""Two-stage registration orchestration.

Stage one fits a global transform between the resampled pair. The moving
feature map is then pulled back through that transform so stage two sees
a roughly aligned pair and fits the local polynomial refinement. The
final mapping is total(u) = stage1(stage2(u)) under the pull-back
convention, re-expressed analytically in original-resolution
coordinates before anything is written to disk.

Feature maps passed between helpers here are always unit-normalized;
loaders in this module normalize (and in full mode upsample) on entry.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional, Tuple

from .filtering import FilterReport, run_filters
from .keypoints import (
    DetectorParams,
    KeypointSet,
    assemble_candidates,
    detect_texture_keypoints,
    load_keypoints_file,
    sample_random_keypoints,
)
from .matching import match_bidirectional
from .model import (
    FeatureMap,
    ImageBuffer,
    RegistrationConfig,
    RegistrationError,
    Transform,
)
from .tensor_io import (
    l2_normalize_channels,
    load_image,
    read_fmap,
    resample_image,
    upsample_featuremap,
)
from .transforms import (
    compose,
    fit_transform,
    rescale_transform,
    warp_featuremap,
)

log = logging.getLogger(__name__)

STATUS_SUCCESS = "success"
STATUS_FAILED = "failed_insufficient"


@dataclass(frozen=True)
class PairInputs:
    """File-level description of one registration job."""

    fixed_image: str
    moving_image: str
    fixed_fmap: str
    moving_fmap: str
    stage2_moving_fmap: Optional[str] = None
    external_keypoints: Optional[str] = None


@dataclass(frozen=True)
class RegistrationResult:
    status: str
    stage1: Optional[Transform]
    stage2: Optional[Transform]
    total: object  # Transform or TransformChain, None on failure
    diagnostics: dict
    fixed_size: Tuple[int, int]
    moving_size: Tuple[int, int]

    @property
    def succeeded(self) -> bool:
        return self.status == STATUS_SUCCESS


def gather_candidate_points(fixed: ImageBuffer, cfg: RegistrationConfig,
                            external_path: Optional[str] = None) -> KeypointSet:
    """Detected-plus-random candidates, or an externally supplied list.

    External points are expected in resampled coordinates and must lie
    inside the resampled frame.
    """
    w, h = fixed.width, fixed.height
    if external_path is not None:
        pts = load_keypoints_file(external_path)
        xy = pts.xy
        if len(pts) and (xy.min() < 0 or xy[:, 0].max() >= w or xy[:, 1].max() >= h):
            raise ValueError(f"{external_path}: keypoints outside the {w}x{h} frame")
        return pts
    params = DetectorParams(min_dist=cfg.min_keypoint_dist,
                            max_points=cfg.keypoints_per_sampler)
    detected = detect_texture_keypoints(fixed, params)
    random_pts = sample_random_keypoints(w, h, cfg.keypoints_per_sampler,
                                         seed=cfg.rng_seed)
    log.debug("candidates: %d detected + %d random", len(detected), len(random_pts))
    return assemble_candidates(detected, random_pts)


def register_stage(fixed_fm: FeatureMap, moving_fm: FeatureMap,
                   points: KeypointSet, kind: str, t_ic: float, t_trans: float,
                   outlier_kind: str = "affine", resolution: str = "full",
                   image_size: Optional[Tuple[int, int]] = None,
                   max_iterations: int = 1) -> tuple:
    """One match/filter/fit pass. Returns (Transform, FilterReport).

    The transform's domain and range scales record the image frame the
    points live in so later rescaling is well defined.
    """
    corrs = match_bidirectional(fixed_fm, moving_fm, points, resolution, image_size)
    filtered, report = run_filters(corrs, t_ic, t_trans, outlier_kind,
                                   max_iterations)
    if image_size is None:
        _, h, w = fixed_fm.data.shape
        image_size = (w, h)
    fitted = fit_transform(kind, filtered,
                           domain_scale=(float(image_size[0]), float(image_size[1])),
                           range_scale=(float(image_size[0]), float(image_size[1])))
    return fitted, report


def _prepare_featuremap(fm: FeatureMap, cfg: RegistrationConfig) -> FeatureMap:
    """Upsample to the resampled frame in full mode, then unit-normalize."""
    m = cfg.resample_size
    _, h, w = fm.data.shape
    if cfg.correlation_resolution == "full" and (h, w) != (m, m):
        fm = upsample_featuremap(fm, m, m)
    return l2_normalize_channels(fm)


def _realigned_moving_features(moving_fm: FeatureMap, stage1: Transform,
                               fixed_fm: FeatureMap,
                               cfg: RegistrationConfig) -> FeatureMap:
    """Pull the moving features back through stage 1 onto the fixed grid."""
    _, fh, fw = fixed_fm.data.shape
    _, mh, mw = moving_fm.data.shape
    t_grid = rescale_transform(stage1, (float(fw), float(fh)), (float(mw), float(mh)))
    warped = warp_featuremap(moving_fm, t_grid, fh, fw)
    return l2_normalize_channels(warped)


def register_resampled(fixed_fm: FeatureMap, moving_fm: FeatureMap,
                       points: KeypointSet, cfg: RegistrationConfig,
                       stage2_moving_fm: Optional[FeatureMap] = None) -> tuple:
    """Run both stages in resampled coordinates.

    Feature maps must already be normalized (and upsampled in full
    mode). Returns (stage1, stage2 or None, diagnostics dict); raises
    RegistrationError subclasses when a stage cannot fit.
    """
    m = cfg.resample_size
    image_size = (m, m)
    diagnostics: dict = {
        "resample_size": m,
        "correlation_resolution": cfg.correlation_resolution,
        "keypoints": {
            "total": len(points),
            "detected": int((points.source == "detected").sum()),
            "random": int((points.source == "random").sum()),
            "external": int((points.source == "external").sum()),
        },
    }
    t0 = time.perf_counter()
    stage1, report1 = register_stage(
        fixed_fm, moving_fm, points, cfg.stage1_kind, cfg.t_ic,
        cfg.t_trans_stage1, cfg.outlier_fit_kind,
        cfg.correlation_resolution, image_size)
    diagnostics["stage1"] = {
        "kind": cfg.stage1_kind, **report1.as_dict(),
        "seconds": round(time.perf_counter() - t0, 4),
    }
    log.info("stage1 %s: %d -> %d -> %d pairs", cfg.stage1_kind,
             report1.input_count, report1.kept_after_ic,
             report1.kept_after_residual)

    stage2 = None
    if cfg.stage2_kind != "none":
        t1 = time.perf_counter()
        if stage2_moving_fm is None:
            stage2_moving_fm = _realigned_moving_features(
                moving_fm, stage1, fixed_fm, cfg)
        stage2, report2 = register_stage(
            fixed_fm, stage2_moving_fm, points, cfg.stage2_kind, cfg.t_ic,
            cfg.t_trans_stage2, cfg.outlier_fit_kind,
            cfg.correlation_resolution, image_size)
        diagnostics["stage2"] = {
            "kind": cfg.stage2_kind, **report2.as_dict(),
            "seconds": round(time.perf_counter() - t1, 4),
        }
        log.info("stage2 %s: %d -> %d -> %d pairs", cfg.stage2_kind,
                 report2.input_count, report2.kept_after_ic,
                 report2.kept_after_residual)
    diagnostics["seconds"] = round(time.perf_counter() - t0, 4)
    return stage1, stage2, diagnostics


def compose_to_original(stage1: Transform, stage2: Optional[Transform],
                        fixed_size: Tuple[int, int],
                        moving_size: Tuple[int, int]) -> tuple:
    """Re-express the stage transforms in original image coordinates.

    Stage 1 maps the fixed frame to the moving frame; stage 2 maps the
    fixed frame to itself (the realigned grid shares the fixed frame).
    """
    fw, fh = float(fixed_size[0]), float(fixed_size[1])
    mw, mh = float(moving_size[0]), float(moving_size[1])
    s1 = rescale_transform(stage1, (fw, fh), (mw, mh))
    if stage2 is None:
        return s1, None, s1
    s2 = rescale_transform(stage2, (fw, fh), (fw, fh))
    return s1, s2, compose(s1, s2)


def register_pair(inputs: PairInputs, cfg: RegistrationConfig) -> RegistrationResult:
    """Full file-to-file registration of one pair."""
    t0 = time.perf_counter()
    m = cfg.resample_size
    fixed_img = load_image(inputs.fixed_image)
    moving_img = load_image(inputs.moving_image)
    fixed_size = (fixed_img.width, fixed_img.height)
    moving_size = (moving_img.width, moving_img.height)
    fixed_rs = resample_image(fixed_img, m, m)

    fixed_fm = _prepare_featuremap(read_fmap(inputs.fixed_fmap), cfg)
    moving_fm = _prepare_featuremap(read_fmap(inputs.moving_fmap), cfg)
    stage2_fm = None
    if inputs.stage2_moving_fmap is not None:
        stage2_fm = _prepare_featuremap(read_fmap(inputs.stage2_moving_fmap), cfg)

    points = gather_candidate_points(fixed_rs, cfg, inputs.external_keypoints)
    try:
        stage1, stage2, diagnostics = register_resampled(
            fixed_fm, moving_fm, points, cfg, stage2_fm)
    except RegistrationError as exc:
        wall = round(time.perf_counter() - t0, 4)
        log.warning("registration failed: %s", exc)
        return RegistrationResult(
            status=STATUS_FAILED, stage1=None, stage2=None, total=None,
            diagnostics={
                "status": STATUS_FAILED,
                "failure_reason": f"{type(exc).__name__}: {exc}",
                "seconds": wall,
            },
            fixed_size=fixed_size, moving_size=moving_size)

    s1, s2, total = compose_to_original(stage1, stage2, fixed_size, moving_size)
    diagnostics["status"] = STATUS_SUCCESS
    diagnostics["fixed_size"] = list(fixed_size)
    diagnostics["moving_size"] = list(moving_size)
    diagnostics["seconds"] = round(time.perf_counter() - t0, 4)
    return RegistrationResult(
        status=STATUS_SUCCESS, stage1=s1, stage2=s2, total=total,
        diagnostics=diagnostics, fixed_size=fixed_size,
        moving_size=moving_size)
