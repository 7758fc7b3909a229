"""Dense cosine-similarity matching between feature maps.

Each candidate point contributes one source vector (nearest grid cell);
that vector is scored against every cell of the destination map and the
argmax becomes the match. Both maps must be unit-normalized per cell so
plain dot products are cosines. The full score matrix is never held in
memory outside debug paths: destination cells are visited in bounded
tiles, scanned in raster order so score ties resolve to the smallest
row-major linear index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .keypoints import KeypointSet
from .model import CorrespondenceSet, FeatureMap, Point2
from .tensor_io import write_fmap

# working-set bound: scores held at once <= this many float64 entries
TILE_BUDGET = 4_000_000


@dataclass(frozen=True)
class CorrelationRow:
    """One point's dense score map (debug only) and its winning cell."""

    point_index: int
    best: Point2
    best_score: float
    scores: Optional[np.ndarray] = None  # (H, W) when materialized


def _check_normalized(fm: FeatureMap, name: str) -> None:
    if not fm.normalized:
        raise ValueError(f"{name} feature map must be unit-normalized before matching")


def _grid_scale(fm: FeatureMap, resolution: str,
                image_size: Optional[Tuple[int, int]]) -> Tuple[float, float, int, int]:
    """Per-axis image->grid factors plus the image extent the points live in."""
    _, h, w = fm.data.shape
    if resolution == "full":
        if image_size is not None and tuple(image_size) != (w, h):
            raise ValueError("full-resolution matching expects maps already at image size")
        return 1.0, 1.0, w, h
    if resolution == "feature_native":
        if image_size is None:
            raise ValueError("feature_native matching needs the image size (w, h)")
        iw, ih = int(image_size[0]), int(image_size[1])
        if iw <= 0 or ih <= 0:
            raise ValueError("image size must be positive")
        return w / iw, h / ih, iw, ih
    raise ValueError(f"unknown correlation resolution {resolution!r}")


def _source_vectors(fm: FeatureMap, xy: np.ndarray, sx: float, sy: float,
                    iw: int, ih: int) -> np.ndarray:
    """Gather one vector per point from the nearest grid cell; (N, C) f64."""
    x, y = xy[:, 0], xy[:, 1]
    if np.any((x < 0) | (x >= iw) | (y < 0) | (y >= ih)):
        raise ValueError("points must lie inside the source image bounds")
    _, h, w = fm.data.shape
    gx = np.clip(np.rint(x * sx).astype(np.intp), 0, w - 1)
    gy = np.clip(np.rint(y * sy).astype(np.intp), 0, h - 1)
    return fm.data[:, gy, gx].astype(np.float64).T


def _best_match(src_vecs: np.ndarray, dst_fm: FeatureMap) -> Tuple[np.ndarray, np.ndarray]:
    """Argmax cell (linear raster index) and score for each source vector."""
    c, h, w = dst_fm.data.shape
    flat = dst_fm.data.reshape(c, h * w)
    n = src_vecs.shape[0]
    best_idx = np.zeros(n, dtype=np.intp)
    best_val = np.full(n, -np.inf)
    tile = max(1, TILE_BUDGET // max(1, n))
    for start in range(0, h * w, tile):
        block = src_vecs @ flat[:, start:start + tile].astype(np.float64)
        local = np.argmax(block, axis=1)  # first occurrence wins inside a tile
        val = block[np.arange(n), local]
        better = val > best_val  # strict: earlier tiles keep ties
        best_idx[better] = start + local[better]
        best_val[better] = val[better]
    return best_idx, best_val


def compute_correspondences(src_fm: FeatureMap, dst_fm: FeatureMap,
                            points: KeypointSet, resolution: str = "full",
                            image_size: Optional[Tuple[int, int]] = None,
                            ) -> CorrespondenceSet:
    """Match every candidate point into the destination map.

    ``image_size`` is the (w, h) extent the point coordinates live in.
    At "full" resolution the maps are already that size; "feature_native"
    scores on the coarser extractor grid and maps the winner back.
    """
    _check_normalized(src_fm, "source")
    _check_normalized(dst_fm, "destination")
    if len(points) == 0:
        return CorrespondenceSet.empty()
    sx, sy, iw, ih = _grid_scale(src_fm, resolution, image_size)
    dsx, dsy, _, _ = _grid_scale(dst_fm, resolution, image_size)
    src_vecs = _source_vectors(src_fm, points.xy, sx, sy, iw, ih)
    idx, val = _best_match(src_vecs, dst_fm)
    _, _, w = dst_fm.data.shape
    gy, gx = np.divmod(idx, w)
    moving = np.column_stack([gx / dsx, gy / dsy]).astype(np.float64)
    sim = np.clip(val, -1.0, 1.0)
    return CorrespondenceSet(points.xy.copy(), moving, sim,
                             np.zeros(len(points), dtype=np.int8))


def match_bidirectional(fixed_fm: FeatureMap, moving_fm: FeatureMap,
                        points: KeypointSet, resolution: str = "full",
                        image_size: Optional[Tuple[int, int]] = None,
                        ) -> CorrespondenceSet:
    """Forward pass, then a backward pass seeded at each forward match.

    The return positions land in ``back_xy``; nothing is filtered here.
    """
    forward = compute_correspondences(fixed_fm, moving_fm, points,
                                      resolution, image_size)
    if len(forward) == 0:
        return forward
    seeds = KeypointSet.from_xy(forward.moving_xy, source="external")
    backward = compute_correspondences(moving_fm, fixed_fm, seeds,
                                       resolution, image_size)
    return forward.with_back(backward.moving_xy)


def correlation_rows(src_fm: FeatureMap, dst_fm: FeatureMap, points: KeypointSet,
                     indices: Sequence[int], resolution: str = "full",
                     image_size: Optional[Tuple[int, int]] = None,
                     ) -> list:
    """Materialized score maps for selected points (debug path)."""
    _check_normalized(src_fm, "source")
    _check_normalized(dst_fm, "destination")
    sx, sy, iw, ih = _grid_scale(src_fm, resolution, image_size)
    dsx, dsy, _, _ = _grid_scale(dst_fm, resolution, image_size)
    rows = []
    c, h, w = dst_fm.data.shape
    flat = dst_fm.data.reshape(c, h * w).astype(np.float64)
    for i in indices:
        i = int(i)
        if not 0 <= i < len(points):
            raise IndexError(f"point index {i} out of range")
        vec = _source_vectors(src_fm, points.xy[i:i + 1], sx, sy, iw, ih)[0]
        scores = (vec @ flat).reshape(h, w)
        idx = int(np.argmax(scores))
        gy, gx = divmod(idx, w)
        rows.append(CorrelationRow(
            point_index=i,
            best=Point2(gx / dsx, gy / dsy),
            best_score=float(np.clip(scores.flat[idx], -1.0, 1.0)),
            scores=scores,
        ))
    return rows


def dump_correlation_row(row: CorrelationRow, path) -> None:
    """Write a row's score map as a single-channel feature tensor file."""
    if row.scores is None:
        raise ValueError("correlation row was not materialized with scores")
    fm = FeatureMap(row.scores[np.newaxis].astype(np.float32))
    write_fmap(fm, path)
