"""Candidate feature points: DoG texture detections plus seeded random points.

The detector is deliberately descriptor-free. Point locations are all the
downstream matcher needs (similarity comes from dense feature maps), so
orientation assignment and descriptor extraction are omitted entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .model import (
    SOURCE_DETECTED,
    SOURCE_EXTERNAL,
    SOURCE_RANDOM,
    ImageBuffer,
    KeypointSet,
)


@dataclass(frozen=True)
class DetectorParams:
    octaves: int = 4
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    contrast_threshold: float = 0.01
    min_dist: float = 10.0
    max_points: int = 1000

    def __post_init__(self) -> None:
        if self.octaves < 1 or self.scales_per_octave < 1:
            raise ValueError("octaves and scales_per_octave must be >= 1")
        if self.base_sigma <= 0 or self.contrast_threshold <= 0:
            raise ValueError("base_sigma and contrast_threshold must be positive")
        if self.min_dist < 0 or self.max_points < 0:
            raise ValueError("min_dist and max_points must be >= 0")


def _dog_stack(base: np.ndarray, params: DetectorParams) -> np.ndarray:
    """Difference-of-Gaussians layers for one octave, shape (S+2, H, W)."""
    s = params.scales_per_octave
    k = 2.0 ** (1.0 / s)
    sigmas = [params.base_sigma * k ** i for i in range(s + 3)]
    gaussians = [gaussian_filter(base, sigma) for sigma in sigmas]
    return np.stack([gaussians[i + 1] - gaussians[i] for i in range(s + 2)])


def _local_extrema(stack: np.ndarray, threshold: float):
    """Strict 26-neighborhood extrema of the interior scale layers.

    Returns (layer, row, col, response) arrays; row/col exclude the 1-px
    image border, layer excludes the first and last DoG layers.
    """
    n_layers, h, w = stack.shape
    if h < 3 or w < 3 or n_layers < 3:
        return np.zeros((0, 4))
    center = stack[1:-1, 1:-1, 1:-1]
    is_max = np.ones(center.shape, dtype=bool)
    is_min = np.ones(center.shape, dtype=bool)
    li, hi, wi = center.shape
    for dl in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dl == 0 and dy == 0 and dx == 0:
                    continue
                nb = stack[1 + dl:1 + dl + li, 1 + dy:1 + dy + hi, 1 + dx:1 + dx + wi]
                is_max &= center > nb
                is_min &= center < nb
    hits = (is_max | is_min) & (np.abs(center) > threshold)
    layer, row, col = np.nonzero(hits)
    resp = np.abs(center[layer, row, col])
    return np.column_stack([layer + 1, row + 1, col + 1, resp])


def _suppress_min_dist(xy: np.ndarray, resp: np.ndarray, min_dist: float,
                       max_points: int) -> np.ndarray:
    """Greedy strongest-first retention; survivors are pairwise farther
    apart than min_dist. Returns indices into the input arrays."""
    # stable, fully deterministic ordering: response desc, then y, then x
    order = np.lexsort((xy[:, 0], xy[:, 1], -resp))
    if min_dist <= 0:
        return order[:max_points]
    cell = max(min_dist, 1e-9)
    buckets: dict = {}
    kept: list = []
    for idx in order:
        x, y = xy[idx]
        cx, cy = int(math.floor(x / cell)), int(math.floor(y / cell))
        ok = True
        for bx in range(cx - 1, cx + 2):
            for by in range(cy - 1, cy + 2):
                for j in buckets.get((bx, by), ()):
                    if (x - xy[j, 0]) ** 2 + (y - xy[j, 1]) ** 2 <= min_dist ** 2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            kept.append(idx)
            buckets.setdefault((cx, cy), []).append(idx)
            if len(kept) >= max_points:
                break
    return np.array(kept, dtype=np.intp)


def detect_texture_keypoints(img: ImageBuffer, params: DetectorParams) -> KeypointSet:
    """Scale-space DoG extrema with greedy minimum-distance suppression.

    Candidates are sorted by descending absolute response and retained
    strongest-first while farther than min_dist from every point already
    kept, capped at max_points. A constant image yields an empty set.
    """
    gray = np.asarray(img.luma(), dtype=np.float64)
    all_xy = []
    all_resp = []
    current = gray
    for octave in range(params.octaves):
        if min(current.shape) < 8:
            break
        found = _local_extrema(_dog_stack(current, params), params.contrast_threshold)
        if found.shape[0]:
            scale = float(2 ** octave)
            all_xy.append(found[:, [2, 1]] * scale)  # (col, row) -> (x, y)
            all_resp.append(found[:, 3])
        current = current[::2, ::2]
    if not all_xy:
        return KeypointSet.empty()
    xy = np.vstack(all_xy)
    resp = np.concatenate(all_resp)
    keep = _suppress_min_dist(xy, resp, params.min_dist, params.max_points)
    return KeypointSet(xy[keep], resp[keep],
                       np.full(keep.shape[0], SOURCE_DETECTED, dtype="U8"))


def sample_random_keypoints(w: float, h: float, k: int, seed: int) -> KeypointSet:
    """K i.i.d. uniform points over [0, w) x [0, h), PCG64-seeded.

    The generator is fixed by name so identical seeds reproduce identical
    point lists across platforms.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    xy = np.column_stack([rng.uniform(0.0, w, size=k), rng.uniform(0.0, h, size=k)])
    return KeypointSet.from_xy(xy, SOURCE_RANDOM)


def load_keypoints_file(path) -> KeypointSet:
    """Parse one 'x,y' decimal pair per line (resampled coordinates)."""
    pts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split(",")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'x,y', got {stripped!r}")
            try:
                x, y = float(parts[0]), float(parts[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'x,y', got {stripped!r}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError(f"{path}:{lineno}: coordinates must be finite")
            pts.append((x, y))
    if not pts:
        return KeypointSet.empty()
    return KeypointSet.from_xy(np.array(pts, dtype=np.float64), SOURCE_EXTERNAL)


def save_keypoints_file(ks: KeypointSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in ks.xy:
            fh.write(f"{x:.17g},{y:.17g}\n")


def assemble_candidates(detected: KeypointSet, random: KeypointSet) -> KeypointSet:
    """Concatenate the two pools, detected first; duplicates are allowed."""
    if len(detected) == 0:
        return random
    if len(random) == 0:
        return detected
    return KeypointSet(
        np.vstack([detected.xy, random.xy]),
        np.concatenate([detected.response, random.response]),
        np.concatenate([detected.source, random.source]),
    )
