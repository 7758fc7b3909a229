"""Zero-shot feature-based image registration.

The package aligns an image pair by matching dense per-pixel feature
vectors between the two images, filtering the resulting correspondences
(inverse consistency, then a global-transform residual test), and fitting
a two-stage transformation: a global homography followed by a local
third-order polynomial. Feature tensors arrive through the FMAP exchange
format, so any extractor that can emit it plugs in unchanged.
"""

from .evaluation import (
    DatasetReport,
    LandmarkPairs,
    ManifestEntry,
    SyntheticPair,
    auc,
    evaluate_dataset,
    generate_synthetic_pair,
    load_landmarks,
    mean_landmark_error,
    read_manifest,
    registration_accuracy,
    save_landmarks,
    success_rate,
    synthetic_feature_grids,
    synthetic_texture,
    write_manifest,
)
from .filtering import (
    FilterReport,
    inverse_consistency_filter,
    run_filters,
    transform_residual_filter,
)
from .keypoints import (
    DetectorParams,
    assemble_candidates,
    detect_texture_keypoints,
    load_keypoints_file,
    sample_random_keypoints,
    save_keypoints_file,
)
from .matching import (
    CorrelationRow,
    compute_correspondences,
    correlation_rows,
    dump_correlation_row,
    match_bidirectional,
)
from .model import (
    CorrespondenceSet,
    DegenerateConfiguration,
    EvaluationThresholds,
    FeatureMap,
    ImageBuffer,
    InsufficientCorrespondences,
    Keypoint,
    KeypointSet,
    Point2,
    PointAtInfinity,
    RegistrationConfig,
    RegistrationError,
    Transform,
    load_transform,
    save_transform,
    to_original_coords,
    to_resampled_coords,
    transform_from_text,
    transform_to_text,
)
from .pipeline import (
    PairInputs,
    RegistrationResult,
    compose_to_original,
    register_pair,
    register_resampled,
    register_stage,
)
from .tensor_io import (
    FmapError,
    FmapFormatError,
    FmapLengthError,
    UnsupportedImageError,
    l2_normalize_channels,
    load_image,
    read_fmap,
    resample_image,
    save_image,
    upsample_featuremap,
    write_fmap,
)
from .transforms import (
    TransformChain,
    apply_to_array,
    apply_to_array_masked,
    apply_transform,
    compose,
    fit_transform,
    identity_transform,
    rescale_transform,
    translation_transform,
    warp_featuremap,
    warp_image,
)

__version__ = "0.1.0"

__all__ = [
    "CorrelationRow",
    "CorrespondenceSet",
    "DatasetReport",
    "DegenerateConfiguration",
    "DetectorParams",
    "EvaluationThresholds",
    "FeatureMap",
    "FilterReport",
    "FmapError",
    "FmapFormatError",
    "FmapLengthError",
    "ImageBuffer",
    "InsufficientCorrespondences",
    "Keypoint",
    "KeypointSet",
    "LandmarkPairs",
    "ManifestEntry",
    "PairInputs",
    "Point2",
    "PointAtInfinity",
    "RegistrationConfig",
    "RegistrationError",
    "RegistrationResult",
    "SyntheticPair",
    "Transform",
    "TransformChain",
    "UnsupportedImageError",
    "apply_to_array",
    "apply_to_array_masked",
    "apply_transform",
    "assemble_candidates",
    "auc",
    "compose",
    "compose_to_original",
    "compute_correspondences",
    "correlation_rows",
    "detect_texture_keypoints",
    "dump_correlation_row",
    "evaluate_dataset",
    "fit_transform",
    "generate_synthetic_pair",
    "identity_transform",
    "inverse_consistency_filter",
    "l2_normalize_channels",
    "load_image",
    "load_keypoints_file",
    "load_landmarks",
    "load_transform",
    "match_bidirectional",
    "mean_landmark_error",
    "read_fmap",
    "read_manifest",
    "register_pair",
    "register_resampled",
    "register_stage",
    "registration_accuracy",
    "resample_image",
    "rescale_transform",
    "run_filters",
    "sample_random_keypoints",
    "save_image",
    "save_keypoints_file",
    "save_landmarks",
    "save_transform",
    "success_rate",
    "synthetic_feature_grids",
    "synthetic_texture",
    "to_original_coords",
    "to_resampled_coords",
    "transform_from_text",
    "transform_residual_filter",
    "transform_to_text",
    "translation_transform",
    "upsample_featuremap",
    "warp_featuremap",
    "warp_image",
    "write_fmap",
    "write_manifest",
]
