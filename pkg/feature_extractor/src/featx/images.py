"""Image loading and the square resample every extractor starts from."""

from __future__ import annotations

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".ppm", ".pgm", ".bmp", ".tif",
                  ".tiff")


def load_rgb(path) -> np.ndarray:
    """Decode to (H, W, 3) float32 in [0, 1]; grayscale is replicated."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return arr


def resample_square(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of (H, W, 3) to (size, size, 3)."""
    if size < 1:
        raise ValueError("size must be >= 1")
    if img.shape[:2] == (size, size):
        return img.astype(np.float32, copy=False)
    pil = Image.fromarray(np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8))
    out = pil.resize((size, size), Image.BILINEAR)
    return np.asarray(out, dtype=np.float32) / 255.0
