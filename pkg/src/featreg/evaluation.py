"""Registration quality metrics, dataset reports, and synthetic benchmarks.

Metric conventions live here and nowhere else: registration accuracy at
an integer threshold T counts pairs with error strictly below T, area
under that curve averages T = 1..T_AUC, and success keeps <= T_SR. A
failed registration (no transform) counts against every metric; its
error is recorded as infinity.

The synthetic generator builds (fixed, moving) pairs with an exact
ground-truth mapping: the moving image is the base texture and the
fixed image is its pull-back through the sampled transform, so fixed
coordinates map to moving coordinates by that transform with no
inversion anywhere. Landmarks are grid points carried through exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import EvaluationThresholds, FeatureMap, ImageBuffer, Transform
from .tensor_io import l2_normalize_channels
from .transforms import (
    TransformChain,
    apply_to_array,
    apply_to_array_masked,
    compose,
    identity_transform,
    warp_image,
)

FAILURE = math.inf

SYNTHETIC_KINDS = (
    "identity", "translation", "affine", "homography",
    "quadratic", "poly3", "homography_cubic",
)


# ---------------------------------------------------------------------------
# landmarks

@dataclass(frozen=True)
class LandmarkPairs:
    """Ground-truth point pairs in original image coordinates."""

    fixed_xy: np.ndarray
    moving_xy: np.ndarray

    def __post_init__(self) -> None:
        fixed = np.asarray(self.fixed_xy, dtype=np.float64)
        moving = np.asarray(self.moving_xy, dtype=np.float64)
        if fixed.ndim != 2 or fixed.shape[1] != 2 or moving.shape != fixed.shape:
            raise ValueError("landmarks must be two (N, 2) arrays of equal length")
        if fixed.size and not (np.isfinite(fixed).all() and np.isfinite(moving).all()):
            raise ValueError("landmark coordinates must be finite")
        fixed.setflags(write=False)
        moving.setflags(write=False)
        object.__setattr__(self, "fixed_xy", fixed)
        object.__setattr__(self, "moving_xy", moving)

    def __len__(self) -> int:
        return self.fixed_xy.shape[0]


def load_landmarks(path) -> LandmarkPairs:
    """Read "fx,fy,mx,my" rows; blank lines ignored."""
    fixed, moving = [], []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split(",")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 'fx,fy,mx,my', got {stripped!r}")
            try:
                fx, fy, mx, my = (float(p) for p in parts)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'fx,fy,mx,my', got {stripped!r}")
            if not all(math.isfinite(v) for v in (fx, fy, mx, my)):
                raise ValueError(f"{path}:{lineno}: coordinates must be finite")
            fixed.append((fx, fy))
            moving.append((mx, my))
    if not fixed:
        return LandmarkPairs(np.zeros((0, 2)), np.zeros((0, 2)))
    return LandmarkPairs(np.array(fixed), np.array(moving))


def save_landmarks(lm: LandmarkPairs, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for (fx, fy), (mx, my) in zip(lm.fixed_xy, lm.moving_xy):
            fh.write(f"{fx:.17g},{fy:.17g},{mx:.17g},{my:.17g}\n")


# ---------------------------------------------------------------------------
# metrics

def mean_landmark_error(t, lm: LandmarkPairs) -> float:
    """Mean Euclidean distance between mapped fixed and true moving points."""
    if len(lm) == 0:
        raise ValueError("cannot evaluate an empty landmark set")
    mapped = apply_to_array(t, lm.fixed_xy)
    return float(np.mean(np.linalg.norm(mapped - lm.moving_xy, axis=1)))


def _as_error_array(mles: Sequence) -> np.ndarray:
    vals = np.array([FAILURE if m is None else float(m) for m in mles])
    if vals.size == 0:
        raise ValueError("metric needs at least one pair")
    if np.any(vals < 0) or np.any(np.isnan(vals)):
        raise ValueError("errors must be non-negative (inf marks failure)")
    return vals


def registration_accuracy(mles: Sequence, threshold: float) -> float:
    """Fraction of pairs with error strictly below the threshold."""
    vals = _as_error_array(mles)
    return float(np.count_nonzero(vals < threshold) / vals.size)


def auc(mles: Sequence, t_auc: int) -> float:
    """Average registration accuracy over thresholds 1..t_auc."""
    if int(t_auc) != t_auc or t_auc < 1:
        raise ValueError("t_auc must be a positive integer")
    vals = _as_error_array(mles)
    total = 0.0
    for t in range(1, int(t_auc) + 1):
        total += float(np.count_nonzero(vals < t))
    return total / (vals.size * int(t_auc))


def success_rate(mles: Sequence, t_sr: float) -> float:
    """Fraction registered with error at or below t_sr (inclusive)."""
    if t_sr <= 0:
        raise ValueError("t_sr must be positive")
    vals = _as_error_array(mles)
    return float(np.count_nonzero(vals <= t_sr) / vals.size)


# ---------------------------------------------------------------------------
# dataset reports

@dataclass(frozen=True)
class DatasetReport:
    pair_ids: tuple
    mles: tuple  # per pair, inf for failures
    auc: float
    success_rate: float
    mean_mle: float  # over successful pairs only, nan if none
    thresholds: EvaluationThresholds
    categories: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "pairs": [
                {"pair_id": p, "mle": (None if math.isinf(m) else m)}
                for p, m in zip(self.pair_ids, self.mles)
            ],
            "auc": self.auc,
            "success_rate": self.success_rate,
            "mean_mle": None if math.isnan(self.mean_mle) else self.mean_mle,
            "t_auc": self.thresholds.t_auc,
            "t_sr": self.thresholds.t_sr,
            "categories": self.categories,
            "timing": self.timing,
        }

    def format_table(self) -> str:
        rows = [("category", "pairs", "AUC", "success", "mean MLE")]
        def fmt(label, count, a, s, m):
            mle = "n/a" if (m is None or math.isnan(m)) else f"{m:.3f}"
            return (label, str(count), f"{a:.3f}", f"{100 * s:.2f}%", mle)
        rows.append(fmt("overall", len(self.mles), self.auc,
                        self.success_rate, self.mean_mle))
        for name in sorted(self.categories):
            c = self.categories[name]
            rows.append(fmt(name, c["count"], c["auc"], c["success_rate"], c["mean_mle"]))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        return "\n".join(
            "  ".join(col.ljust(widths[i]) for i, col in enumerate(row)).rstrip()
            for row in rows
        )


def _aggregate(mles: np.ndarray, thresholds: EvaluationThresholds) -> tuple:
    a = auc(mles, thresholds.t_auc)
    s = success_rate(mles, thresholds.t_sr)
    ok = mles[mles <= thresholds.t_sr]
    mean = float(np.mean(ok)) if ok.size else math.nan
    return a, s, mean


def evaluate_dataset(transforms: Sequence, landmarks: Sequence[LandmarkPairs],
                     thresholds: EvaluationThresholds,
                     pair_ids: Optional[Sequence[str]] = None,
                     categories: Optional[Sequence[str]] = None,
                     timings: Optional[Sequence[float]] = None) -> DatasetReport:
    """Aggregate per-pair errors; a None transform marks a failed pair."""
    n = len(transforms)
    if len(landmarks) != n:
        raise ValueError("one landmark set per transform required")
    if pair_ids is None:
        pair_ids = [f"pair_{i:04d}" for i in range(n)]
    if len(pair_ids) != n or (categories is not None and len(categories) != n):
        raise ValueError("aligned per-pair lists required")
    mles = np.array([
        FAILURE if t is None else mean_landmark_error(t, lm)
        for t, lm in zip(transforms, landmarks)
    ])
    a, s, mean = _aggregate(mles, thresholds)
    cats: dict = {}
    if categories is not None:
        for name in sorted(set(categories)):
            mask = np.array([c == name for c in categories])
            ca, cs, cmean = _aggregate(mles[mask], thresholds)
            cats[name] = {
                "count": int(mask.sum()), "auc": ca, "success_rate": cs,
                "mean_mle": None if math.isnan(cmean) else cmean,
            }
    timing: dict = {}
    if timings is not None:
        if len(timings) != n:
            raise ValueError("aligned per-pair lists required")
        timing = {
            "total_s": float(np.sum(timings)),
            "mean_s": float(np.mean(timings)),
            "max_s": float(np.max(timings)),
        }
    return DatasetReport(tuple(pair_ids), tuple(mles), a, s, mean,
                         thresholds, cats, timing)


# ---------------------------------------------------------------------------
# dataset manifests

@dataclass(frozen=True)
class ManifestEntry:
    pair_id: str
    fixed_path: str
    moving_path: str
    landmarks_path: str
    category: str = ""


MANIFEST_COLUMNS = ("pair_id", "fixed_path", "moving_path", "landmarks_path", "category")


def read_manifest(path) -> list:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty manifest")
        missing = [c for c in MANIFEST_COLUMNS[:4] if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path}: manifest missing columns {missing}")
        entries = []
        for row in reader:
            entries.append(ManifestEntry(
                pair_id=row["pair_id"],
                fixed_path=row["fixed_path"],
                moving_path=row["moving_path"],
                landmarks_path=row["landmarks_path"],
                category=row.get("category", "") or "",
            ))
    if not entries:
        raise ValueError(f"{path}: manifest has no pairs")
    return entries


def write_manifest(entries: Sequence[ManifestEntry], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for e in entries:
            writer.writerow([e.pair_id, e.fixed_path, e.moving_path,
                             e.landmarks_path, e.category])


# ---------------------------------------------------------------------------
# synthetic benchmark

@dataclass(frozen=True)
class SyntheticPair:
    fixed: ImageBuffer
    moving: ImageBuffer
    landmarks: LandmarkPairs
    ground_truth: object  # Transform or TransformChain


def synthetic_texture(w: int, h: int, seed: int) -> ImageBuffer:
    """Blob-and-vessel test texture with structure at several scales."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = 0.15 + 0.1 * np.sin(2 * np.pi * xx / w) * np.sin(2 * np.pi * yy / h)
    n_blobs = max(20, (w * h) // 900)
    cx = rng.uniform(0, w, n_blobs)
    cy = rng.uniform(0, h, n_blobs)
    sig = rng.uniform(2.0, max(3.0, min(w, h) / 20.0), n_blobs)
    amp = rng.uniform(0.15, 0.5, n_blobs) * rng.choice([-1.0, 1.0], n_blobs)
    for i in range(n_blobs):
        img += amp[i] * np.exp(-((xx - cx[i]) ** 2 + (yy - cy[i]) ** 2) / (2 * sig[i] ** 2))
    # vessel-like dark polylines with a gaussian cross-section
    for _ in range(max(3, min(w, h) // 40)):
        x, y = rng.uniform(0.1 * w, 0.9 * w), rng.uniform(0.1 * h, 0.9 * h)
        ang = rng.uniform(0, 2 * np.pi)
        width = rng.uniform(1.0, 2.5)
        for _ in range(60):
            img -= 0.25 * np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2 * width ** 2))
            ang += rng.normal(0, 0.25)
            step = min(w, h) / 40.0
            x += step * np.cos(ang)
            y += step * np.sin(ang)
            if not (0 <= x < w and 0 <= y < h):
                break
    lo, hi = img.min(), img.max()
    return ImageBuffer(((img - lo) / (hi - lo)).astype(np.float32))


def _similarity_homography(rng, w, h, max_rot_deg=18.0, scale_lo=0.8,
                           scale_hi=1.2, max_shift_frac=0.10) -> Transform:
    """Rotation/scale about the image center plus translation, as a homography."""
    ang = math.radians(rng.uniform(-max_rot_deg, max_rot_deg))
    s = rng.uniform(scale_lo, scale_hi)
    tx = rng.uniform(-max_shift_frac, max_shift_frac) * w
    ty = rng.uniform(-max_shift_frac, max_shift_frac) * h
    c, si = s * math.cos(ang), s * math.sin(ang)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    # x' = c(x-cx) - si(y-cy) + cx + tx
    b1 = cx + tx - c * cx + si * cy
    b2 = cy + ty - si * cx - c * cy
    return Transform("homography", [c, -si, b1, si, c, b2, 0.0, 0.0, 1.0])


def _identity_poly(kind: str) -> np.ndarray:
    return np.array(identity_transform(kind).params, dtype=np.float64)


def _jittered_poly(rng, kind: str, w, h, amp: float) -> Transform:
    """Identity plus a displacement field reaching ~amp pixels at the rim."""
    params = _identity_poly(kind)
    half = params.size // 2
    degree = {"affine": 1, "quadratic": 2, "poly3": 3}[kind]
    # monomial order fixed: 1, x, y, x^2, xy, y^2, x^3, ...
    exponents = [(i - j, j) for i in range(degree + 1) for j in range(i + 1)]
    extent = max(w, h)
    for coord in range(2):
        for k, (ex, ey) in enumerate(exponents):
            scale = amp / (extent ** (ex + ey)) if (ex + ey) else amp * 0.02
            params[coord * half + k] += rng.uniform(-scale, scale)
    return Transform(kind, params)


def _sample_ground_truth(kind: str, w: int, h: int, rng, warp_amp: float):
    if kind == "identity":
        return identity_transform("homography")
    if kind == "translation":
        dx = rng.uniform(-0.1, 0.1) * w
        dy = rng.uniform(-0.1, 0.1) * h
        return Transform("affine", [dx, 1.0, 0.0, dy, 0.0, 1.0])
    if kind == "homography":
        return _similarity_homography(rng, w, h)
    if kind == "affine":
        base = _similarity_homography(rng, w, h, max_rot_deg=12.0)
        p = base.params
        return Transform("affine", [p[2], p[0], p[1], p[5], p[3], p[4]])
    if kind in ("quadratic", "poly3"):
        return _jittered_poly(rng, kind, w, h, warp_amp)
    if kind == "homography_cubic":
        local = _jittered_poly(rng, "poly3", w, h, warp_amp)
        outer = _similarity_homography(rng, w, h, max_rot_deg=10.0,
                                       scale_lo=0.9, scale_hi=1.1,
                                       max_shift_frac=0.05)
        return compose(outer, local)
    raise ValueError(f"unknown synthetic kind {kind!r}")


def _tag_frames(t, w: int, h: int):
    """Record the pixel frame a sampled transform lives in."""
    if isinstance(t, TransformChain):
        return TransformChain(tuple(_tag_frames(m, w, h) for m in t.members))
    return Transform(t.kind, t.params, (float(w), float(h)), (float(w), float(h)))


def _grid_landmarks(t, w: int, h: int, n: int) -> LandmarkPairs:
    margin = 0.08
    xs = np.linspace(margin * w, (1 - margin) * w, n)
    ys = np.linspace(margin * h, (1 - margin) * h, n)
    gx, gy = np.meshgrid(xs, ys)
    fixed = np.column_stack([gx.ravel(), gy.ravel()])
    mapped, valid = apply_to_array_masked(t, fixed)
    inside = valid & (mapped[:, 0] >= 0) & (mapped[:, 0] <= w - 1) \
        & (mapped[:, 1] >= 0) & (mapped[:, 1] <= h - 1)
    return LandmarkPairs(fixed[inside], mapped[inside])


def generate_synthetic_pair(base: ImageBuffer, kind: str, seed: int,
                            warp_amp: float = 6.0,
                            landmark_grid: int = 10) -> SyntheticPair:
    """Deterministic ground-truth pair: fixed is the pull-back of moving.

    The sampled transform maps fixed coordinates to moving coordinates.
    Landmark pairs are exact by construction; at least 4 must survive the
    bounds check or the transform is resampled.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    w, h = base.width, base.height
    rng = np.random.default_rng(seed)
    for _ in range(64):
        t = _tag_frames(_sample_ground_truth(kind, w, h, rng, warp_amp), w, h)
        landmarks = _grid_landmarks(t, w, h, landmark_grid)
        if len(landmarks) >= max(4, (landmark_grid * landmark_grid) // 3):
            fixed = warp_image(base, t, w, h)
            return SyntheticPair(fixed, base, landmarks, t)
    raise RuntimeError(f"could not sample a usable {kind} transform (seed {seed})")


def synthetic_feature_grids(t, image_size, grid: int = 128, channels: int = 32,
                            seed: int = 0):
    """Analytic feature pair for a known mapping: the moving grid holds
    distinct random unit vectors and each fixed cell copies the moving
    cell its center lands on, so dense matching must recover the mapping
    up to grid quantization. Cells mapping outside get fresh vectors."""
    w, h = int(image_size[0]), int(image_size[1])
    rng = np.random.default_rng(seed)
    moving = rng.normal(size=(channels, grid, grid)).astype(np.float32)
    filler = rng.normal(size=(channels, grid, grid)).astype(np.float32)
    moving_fm = l2_normalize_channels(FeatureMap(moving))
    filler = l2_normalize_channels(FeatureMap(filler)).data

    jj, ii = np.meshgrid(np.arange(grid), np.arange(grid))  # jj = x index
    pos = np.column_stack([jj.ravel() * (w / grid), ii.ravel() * (h / grid)])
    mapped, valid = apply_to_array_masked(t, pos)
    inside = valid & (mapped[:, 0] >= 0) & (mapped[:, 0] < w) \
        & (mapped[:, 1] >= 0) & (mapped[:, 1] < h)
    cx = np.clip(np.rint(mapped[:, 0] * (grid / w)).astype(np.intp), 0, grid - 1)
    cy = np.clip(np.rint(mapped[:, 1] * (grid / h)).astype(np.intp), 0, grid - 1)
    gathered = moving_fm.data[:, cy, cx]  # (C, grid*grid)
    fixed_flat = np.where(inside[np.newaxis, :], gathered,
                          filler.reshape(channels, -1))
    fixed_fm = FeatureMap(fixed_flat.reshape(channels, grid, grid),
                          normalized=True)
    return fixed_fm, moving_fm
