"""Backend interface shared by the feature extractors.

A backend owns the heavy model; the orchestration in extract.py owns
resampling, noising, and file output. Keeping the boundary here means
the whole pipeline is exercisable with the deterministic stub backend
on machines without model weights.
"""

from __future__ import annotations

import hashlib

import numpy as np

# decoder block index -> downsampling factor relative to the input image
BLOCK_FACTORS = {1: 8, 2: 16, 3: 32, 4: 64}

LATENT_FACTOR = 8  # autoencoder spatial reduction


class CheckpointError(RuntimeError):
    """A pretrained model or its runtime dependencies are unavailable."""


class FeatureBackend:
    """Interface: encode an image to a latent, then featurize a noisy latent.

    ``encode_latent`` takes (H, W, 3) float32 in [0, 1] and returns a
    (C_lat, H/8, W/8) latent. ``features`` takes the noisy latent, the
    time step, and the decoder block index, and returns (F, h, w) raw
    activations with h = H / BLOCK_FACTORS[block]. ``alpha_bar`` exposes
    the schedule so noising happens outside the backend.

    Backends with ``uses_noise`` False (the CNN ablation) skip the latent
    noising: ``encode_latent`` is just preprocessing and ``features``
    ignores the time step.
    """

    name = "base"
    uses_noise = True

    def encode_latent(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def features(self, z_t: np.ndarray, t: int, block: int) -> np.ndarray:
        raise NotImplementedError

    def alpha_bar(self, t: int) -> float:
        raise NotImplementedError


def _pool_mean(arr: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping mean pool of (C, H, W) by an exact factor."""
    c, h, w = arr.shape
    if h % factor or w % factor:
        raise ValueError(f"spatial dims {h}x{w} not divisible by {factor}")
    view = arr.reshape(c, h // factor, factor, w // factor, factor)
    return view.mean(axis=(2, 4))


def _neighborhood(arr: np.ndarray) -> np.ndarray:
    """Stack each cell with its 8 neighbors: (C, H, W) -> (9C, H, W).

    Edges are padded by replication, so border cells see themselves
    where a neighbor is missing.
    """
    c, h, w = arr.shape
    padded = np.pad(arr, ((0, 0), (1, 1), (1, 1)), mode="edge")
    views = [padded[:, 1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
             for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    return np.concatenate(views, axis=0)


class StubBackend(FeatureBackend):
    """Deterministic model-free backend for tests and pipeline smoke runs.

    The latent is a mean-pooled copy of the image; features are a fixed
    seeded random projection of each pooled cell's 3x3 neighborhood, a
    one-layer random convolution. Identical inputs and seeds give
    byte-identical outputs, and cells stay locally distinctive enough
    for the engine's mutual-best matching to work on real textures.
    """

    name = "stub"
    channels = 32

    def __init__(self, seed: int = 0):
        from .noising import linear_alpha_bars
        self._alpha_bars = linear_alpha_bars()
        # the projection must not depend on the per-image noise draw
        digest = hashlib.sha256(f"stub-projection-{seed}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        self._proj = rng.normal(size=(self.channels, 36)).astype(np.float32)

    def encode_latent(self, image: np.ndarray) -> np.ndarray:
        planes = np.transpose(image.astype(np.float32), (2, 0, 1))
        gray = planes.mean(axis=0, keepdims=True)
        stacked = np.concatenate([planes, gray], axis=0)  # 4 channels
        return _pool_mean(stacked, LATENT_FACTOR)

    def features(self, z_t: np.ndarray, t: int, block: int) -> np.ndarray:
        if block not in BLOCK_FACTORS:
            raise ValueError(f"block must be one of {sorted(BLOCK_FACTORS)}")
        pooled = _pool_mean(z_t, BLOCK_FACTORS[block] // LATENT_FACTOR)
        stacked = _neighborhood(pooled)  # 36 = 4 channels x 3 x 3
        flat = self._proj @ stacked.reshape(36, -1)
        return flat.reshape(self.channels, *pooled.shape[1:])

    def alpha_bar(self, t: int) -> float:
        if t < 1:
            raise ValueError("t must be >= 1")
        return float(self._alpha_bars[min(t, len(self._alpha_bars)) - 1])
