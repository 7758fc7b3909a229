"""SIFT keypoint export in the engine's keypoints text format.

Detections are taken on the resampled image so the written coordinates
are already in the frame the feature maps use. Suppression keeps the
strongest detections first and drops anything within min_dist of a
survivor, matching the engine's own detector convention.
"""

from __future__ import annotations

import numpy as np

from .backends import CheckpointError


def _require_cv2():
    try:
        import cv2
    except ImportError as exc:
        raise CheckpointError(
            f"SIFT export needs opencv-python-headless ({exc})"
        ) from exc
    return cv2


def sift_keypoints(image: np.ndarray, k: int, min_dist: float = 10.0) -> np.ndarray:
    """Top-k SIFT detections of an (H, W, 3) float image, as (N, 2) xy.

    N can fall short of k on low-texture images; a constant image gives
    an empty array.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    cv2 = _require_cv2()
    rgb = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    gray = cv2.cvtColor(rgb, cv2.COLOR_RGB2GRAY)
    detections = cv2.SIFT_create().detect(gray, None)
    if not detections or k == 0:
        return np.zeros((0, 2), dtype=np.float64)

    xy = np.array([d.pt for d in detections], dtype=np.float64)
    resp = np.array([d.response for d in detections], dtype=np.float64)
    # subpixel refinement can land just outside the frame; consumers
    # require in-bounds coordinates, so drop those detections
    h, w = gray.shape
    inside = (xy[:, 0] >= 0) & (xy[:, 0] < w) & (xy[:, 1] >= 0) & (xy[:, 1] < h)
    xy, resp = xy[inside], resp[inside]
    if xy.shape[0] == 0:
        return np.zeros((0, 2), dtype=np.float64)
    # response desc, then y, then x: fully deterministic ordering
    order = np.lexsort((xy[:, 0], xy[:, 1], -resp))

    kept: list[int] = []
    limit = float(min_dist) ** 2
    for idx in order:
        x, y = xy[idx]
        if all((x - xy[j, 0]) ** 2 + (y - xy[j, 1]) ** 2 > limit for j in kept):
            kept.append(int(idx))
            if len(kept) >= k:
                break
    return xy[kept]


def export_sift_keypoints(image: np.ndarray, k: int, path,
                          min_dist: float = 10.0) -> int:
    """Write top-k SIFT detections as 'x,y' lines; returns the count."""
    pts = sift_keypoints(image, k, min_dist)
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in pts:
            fh.write(f"{x:.17g},{y:.17g}\n")
    return pts.shape[0]
