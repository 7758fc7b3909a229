"""featx: feature map extraction for the featreg registration engine.

Turns images into FMAP feature files using pretrained model activations
(latent-diffusion U-Net decoder blocks, or VGG19 as a CNN ablation) and
optionally exports SIFT keypoints in the engine's text format. The two
packages share nothing but the file formats.
"""

from .backends import (
    BLOCK_FACTORS,
    CheckpointError,
    FeatureBackend,
    StubBackend,
)
from .extract import (
    MODELS,
    ExtractorConfig,
    build_backend,
    extract_features,
    extract_file,
)
from .fmap import peek_header, write_fmap
from .images import IMAGE_SUFFIXES, load_rgb, resample_square
from .noising import NOISE_COEFFICIENTS, linear_alpha_bars, noisy_latent
from .sift import export_sift_keypoints, sift_keypoints

__all__ = [
    "BLOCK_FACTORS",
    "CheckpointError",
    "FeatureBackend",
    "StubBackend",
    "MODELS",
    "ExtractorConfig",
    "build_backend",
    "extract_features",
    "extract_file",
    "peek_header",
    "write_fmap",
    "IMAGE_SUFFIXES",
    "load_rgb",
    "resample_square",
    "NOISE_COEFFICIENTS",
    "linear_alpha_bars",
    "noisy_latent",
    "export_sift_keypoints",
    "sift_keypoints",
]

__version__ = "0.1.0"
