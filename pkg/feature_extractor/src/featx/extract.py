"""Extraction pipeline: image file in, FMAP (plus keypoints) out.

The steps are fixed regardless of backend: load, resample to a square
working size, encode, noise the latent (diffusion-style backends only),
run the model once, write the captured activation. Determinism comes
from seeding the noise draw per image, so re-running a directory gives
byte-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import BLOCK_FACTORS, FeatureBackend
from .fmap import write_fmap
from .images import load_rgb, resample_square
from .noising import NOISE_COEFFICIENTS, noisy_latent
from .sift import export_sift_keypoints

MODELS = ("diffusion", "cnn", "stub")


@dataclass(frozen=True)
class ExtractorConfig:
    model: str = "diffusion"
    t: int = 1
    block: int = 3
    size: int = 920
    seed: int = 0
    coefficient: str = "linear"
    checkpoint: str | None = None
    device: str = "cpu"
    layer: str = "relu5_4"
    untrained: bool = False
    keypoints: int = 1000
    min_dist: float = 10.0

    def __post_init__(self) -> None:
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.block not in BLOCK_FACTORS:
            raise ValueError(f"block must be one of {sorted(BLOCK_FACTORS)}")
        if self.size < 64:
            raise ValueError("size must be >= 64")
        if self.coefficient not in NOISE_COEFFICIENTS:
            raise ValueError(f"coefficient must be one of {NOISE_COEFFICIENTS}")
        if self.keypoints < 0:
            raise ValueError("keypoints must be >= 0")
        if self.min_dist < 0:
            raise ValueError("min_dist must be >= 0")


def build_backend(cfg: ExtractorConfig) -> FeatureBackend:
    if cfg.model == "stub":
        from .backends import StubBackend
        return StubBackend(seed=cfg.seed)
    if cfg.model == "cnn":
        from .cnn import Vgg19Backend
        return Vgg19Backend(layer=cfg.layer, device=cfg.device,
                            untrained=cfg.untrained, seed=cfg.seed)
    from .diffusion import DEFAULT_CHECKPOINT, StableDiffusionBackend
    return StableDiffusionBackend(checkpoint=cfg.checkpoint or DEFAULT_CHECKPOINT,
                                  device=cfg.device)


def extract_features(image: np.ndarray, cfg: ExtractorConfig,
                     backend: FeatureBackend) -> np.ndarray:
    """(H, W, 3) float image in [0, 1] -> (C, h, w) float32 activation."""
    z0 = backend.encode_latent(image)
    if backend.uses_noise:
        rng = np.random.default_rng(cfg.seed)
        eps = rng.standard_normal(z0.shape).astype(np.float32)
        z = noisy_latent(z0, backend.alpha_bar(cfg.t), eps, cfg.coefficient)
    else:
        z = z0
    feats = backend.features(z, cfg.t, cfg.block)
    return np.ascontiguousarray(feats, dtype=np.float32)


def extract_file(in_path, out_dir, cfg: ExtractorConfig,
                 backend: FeatureBackend) -> dict:
    """Process one image file; returns the paths written keyed by kind."""
    in_path = Path(in_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image = resample_square(load_rgb(in_path), cfg.size)

    written = {}
    fmap_path = out_dir / f"{in_path.stem}.fmap"
    write_fmap(extract_features(image, cfg, backend), fmap_path)
    written["fmap"] = fmap_path
    if cfg.keypoints > 0:
        kp_path = out_dir / f"{in_path.stem}.keypoints.csv"
        export_sift_keypoints(image, cfg.keypoints, kp_path, cfg.min_dist)
        written["keypoints"] = kp_path
    return written
