"""Core domain types and coordinate conventions.

Every module in this package shares the conventions below.

* ``x`` is the column index (rightward), ``y`` the row index (downward);
  the origin sits at the top-left of the image. Positions are continuous,
  sub-pixel values allowed.
* Transforms map FIXED-image coordinates to MOVING-image coordinates
  (pull-back convention): warping samples the moving image at transformed
  fixed-grid positions, and landmark error evaluates the transform on the
  fixed-image landmarks.
* All value types are immutable after construction; instances can be shared
  freely across threads.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

TRANSFORM_KINDS = ("affine", "homography", "quadratic", "poly3")

# Parameter-vector length per transform kind. Polynomial kinds store the
# x-coordinate coefficients first, then the y-coordinate coefficients, each
# following the monomial order documented in transforms.MONOMIAL_EXPONENTS.
# The homography stores the full 3x3 matrix row-major, normalized so the
# last entry equals 1 (8 free values).
PARAM_COUNTS = {"affine": 6, "homography": 9, "quadratic": 12, "poly3": 20}

# Minimum number of point pairs needed to determine each kind.
MIN_PAIRS = {"affine": 3, "homography": 4, "quadratic": 6, "poly3": 10}

SOURCE_DETECTED = "detected"
SOURCE_RANDOM = "random"
SOURCE_EXTERNAL = "external"
KEYPOINT_SOURCES = (SOURCE_DETECTED, SOURCE_RANDOM, SOURCE_EXTERNAL)

STATUS_ACTIVE = 0
STATUS_REJECTED_IC = 1
STATUS_REJECTED_RESIDUAL = 2
STATUS_NAMES = {
    STATUS_ACTIVE: "active",
    STATUS_REJECTED_IC: "rejected_ic",
    STATUS_REJECTED_RESIDUAL: "rejected_residual",
}

FEATURE_SOURCES = ("fmap_file", "cnn", "diffusion")
CORRELATION_RESOLUTIONS = ("full", "feature_native")


class RegistrationError(Exception):
    """Base class for registration-domain failures."""


class InsufficientCorrespondences(RegistrationError):
    """Too few active correspondences to fit the requested transform."""


class DegenerateConfiguration(RegistrationError):
    """The point geometry does not determine the requested transform."""


class PointAtInfinity(RegistrationError):
    """A homography drove a point's projective denominator to ~zero."""


def _as_readonly(arr: np.ndarray, dtype, shape_desc: str, ndim: int) -> np.ndarray:
    out = np.asarray(arr, dtype=dtype)
    if out.ndim != ndim:
        raise ValueError(f"expected {shape_desc}, got shape {out.shape}")
    out = np.ascontiguousarray(out)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Point2:
    """A 2D position in pixels; x = column, y = row, origin top-left."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point coordinates must be finite, got ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


def to_resampled_coords(p: Point2, orig_w: float, orig_h: float, m: float) -> Point2:
    """Map a point from an original WxH image into its MxM resample.

    Scaling is anisotropic: x is scaled by m/orig_w and y by m/orig_h, so
    non-square originals still land on the square working grid.
    """
    if orig_w <= 0 or orig_h <= 0 or m <= 0:
        raise ValueError("image dimensions must be positive")
    return Point2(p.x * m / orig_w, p.y * m / orig_h)


def to_original_coords(p: Point2, orig_w: float, orig_h: float, m: float) -> Point2:
    """Exact inverse of :func:`to_resampled_coords`."""
    if orig_w <= 0 or orig_h <= 0 or m <= 0:
        raise ValueError("image dimensions must be positive")
    return Point2(p.x * orig_w / m, p.y * orig_h / m)


def scale_coords_array(xy: np.ndarray, sx: float, sy: float) -> np.ndarray:
    """Vectorized coordinate scaling for (N, 2) arrays of x,y pairs."""
    xy = np.asarray(xy, dtype=np.float64)
    return xy * np.array([sx, sy], dtype=np.float64)


@dataclass(frozen=True)
class ImageBuffer:
    """A decoded image: (H, W) grayscale or (H, W, 3) RGB float32 in [0, 1]."""

    samples: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.float32)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3):
            raise ValueError(f"image must be (H, W) or (H, W, 3), got shape {arr.shape}")
        if arr.ndim == 3 and arr.shape[2] != 3:
            raise ValueError(f"color images must have 3 channels, got {arr.shape[2]}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image dimensions must be >= 1, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 2 else 3

    def luma(self) -> np.ndarray:
        """Grayscale plane; RGB is reduced with Rec.601 weights."""
        if self.samples.ndim == 2:
            return self.samples
        w = np.array([0.299, 0.587, 0.114], dtype=np.float32)
        return self.samples @ w


@dataclass(frozen=True)
class FeatureMap:
    """Dense per-pixel feature tensor, channel-major (C, H, W) float32."""

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        arr = _as_readonly(self.data, np.float32, "(C, H, W) tensor", 3)
        if min(arr.shape) < 1:
            raise ValueError(f"feature map dimensions must be >= 1, got {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def pixel_vector(self, x: int, y: int) -> np.ndarray:
        """The F-vector at integer grid cell (x, y)."""
        return self.data[:, y, x]


@dataclass(frozen=True)
class Keypoint:
    location: Point2
    response: float = 0.0
    source: str = SOURCE_EXTERNAL

    def __post_init__(self) -> None:
        if self.source not in KEYPOINT_SOURCES:
            raise ValueError(f"unknown keypoint source {self.source!r}")


@dataclass(frozen=True)
class KeypointSet:
    """Column-oriented keypoint storage: xy is (N, 2) float64 as (x, y)."""

    xy: np.ndarray
    response: np.ndarray
    source: np.ndarray

    def __post_init__(self) -> None:
        xy = _as_readonly(self.xy, np.float64, "(N, 2) coordinates", 2)
        if xy.shape[1] != 2:
            raise ValueError(f"keypoint coordinates must be (N, 2), got {xy.shape}")
        resp = _as_readonly(self.response, np.float64, "(N,) responses", 1)
        src = np.asarray(self.source)
        if src.shape != (xy.shape[0],) or resp.shape != (xy.shape[0],):
            raise ValueError("keypoint columns must share one length")
        src = np.ascontiguousarray(src.astype("U8"))
        src.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "response", resp)
        object.__setattr__(self, "source", src)

    @classmethod
    def empty(cls) -> "KeypointSet":
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype="U8"))

    @classmethod
    def from_xy(cls, xy: np.ndarray, source: str, response=None) -> "KeypointSet":
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        n = xy.shape[0]
        resp = np.zeros(n) if response is None else np.asarray(response, dtype=np.float64)
        return cls(xy, resp, np.full(n, source, dtype="U8"))

    def __len__(self) -> int:
        return self.xy.shape[0]

    def __iter__(self) -> Iterator[Keypoint]:
        for i in range(len(self)):
            yield self.keypoint(i)

    def keypoint(self, i: int) -> Keypoint:
        return Keypoint(
            Point2(float(self.xy[i, 0]), float(self.xy[i, 1])),
            float(self.response[i]),
            str(self.source[i]),
        )


@dataclass(frozen=True)
class CorrespondenceSet:
    """Paired fixed/moving points with similarity scores and filter status.

    ``back_xy`` holds the return positions of the backward matching pass
    (None until that pass has run). Filters never move points; they only
    rewrite ``status``.
    """

    fixed_xy: np.ndarray
    moving_xy: np.ndarray
    similarity: np.ndarray
    status: np.ndarray
    back_xy: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        fixed = _as_readonly(self.fixed_xy, np.float64, "(N, 2) fixed points", 2)
        moving = _as_readonly(self.moving_xy, np.float64, "(N, 2) moving points", 2)
        sim = _as_readonly(self.similarity, np.float64, "(N,) similarities", 1)
        status = _as_readonly(self.status, np.int8, "(N,) status codes", 1)
        n = fixed.shape[0]
        if moving.shape != (n, 2) or sim.shape != (n,) or status.shape != (n,):
            raise ValueError("correspondence columns must share one length")
        back = self.back_xy
        if back is not None:
            back = _as_readonly(back, np.float64, "(N, 2) back points", 2)
            if back.shape != (n, 2):
                raise ValueError("back_xy must match the correspondence count")
        if n and (sim.min() < -1.0 - 1e-9 or sim.max() > 1.0 + 1e-9):
            raise ValueError("similarities must lie in [-1, 1]")
        object.__setattr__(self, "fixed_xy", fixed)
        object.__setattr__(self, "moving_xy", moving)
        object.__setattr__(self, "similarity", sim)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "back_xy", back)

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        z = np.zeros((0, 2))
        return cls(z, z, np.zeros(0), np.zeros(0, dtype=np.int8))

    @classmethod
    def from_pairs(cls, fixed_xy: np.ndarray, moving_xy: np.ndarray,
                   back_xy: Optional[np.ndarray] = None) -> "CorrespondenceSet":
        """All-active set with unit similarity; convenient for fitting."""
        fixed_xy = np.asarray(fixed_xy, dtype=np.float64).reshape(-1, 2)
        moving_xy = np.asarray(moving_xy, dtype=np.float64).reshape(-1, 2)
        n = fixed_xy.shape[0]
        return cls(fixed_xy, moving_xy, np.ones(n), np.zeros(n, dtype=np.int8), back_xy)

    def __len__(self) -> int:
        return self.fixed_xy.shape[0]

    @property
    def active_mask(self) -> np.ndarray:
        return self.status == STATUS_ACTIVE

    @property
    def active_count(self) -> int:
        return int(np.count_nonzero(self.active_mask))

    def with_status(self, status: np.ndarray) -> "CorrespondenceSet":
        return CorrespondenceSet(self.fixed_xy, self.moving_xy, self.similarity,
                                 status, self.back_xy)

    def with_back(self, back_xy: np.ndarray) -> "CorrespondenceSet":
        return CorrespondenceSet(self.fixed_xy, self.moving_xy, self.similarity,
                                 self.status, back_xy)


@dataclass(frozen=True)
class Transform:
    """Tagged parameter vector for one of the four transform families.

    Parameters live in the coordinate frame the transform was fitted in.
    ``domain_scale``/``range_scale`` record the (width, height) of the input
    and output frames so a transform file is self-describing.
    """

    kind: str
    params: np.ndarray
    domain_scale: tuple[float, float] = (1.0, 1.0)
    range_scale: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self) -> None:
        if self.kind not in PARAM_COUNTS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        params = _as_readonly(self.params, np.float64, "parameter vector", 1)
        if params.shape[0] != PARAM_COUNTS[self.kind]:
            raise ValueError(
                f"{self.kind} expects {PARAM_COUNTS[self.kind]} params, got {params.shape[0]}"
            )
        if not np.all(np.isfinite(params)):
            raise ValueError("transform parameters must be finite")
        if self.kind == "homography":
            h = params.reshape(3, 3)
            if abs(h[2, 2] - 1.0) > 1e-9:
                raise ValueError("homography params must be normalized to h33 = 1")
            if abs(float(np.linalg.det(h))) <= 1e-12:
                raise DegenerateConfiguration("homography matrix is singular")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "domain_scale", tuple(float(v) for v in self.domain_scale))
        object.__setattr__(self, "range_scale", tuple(float(v) for v in self.range_scale))


def transform_to_text(t: Transform) -> str:
    """Serialize a transform to the 3-line text format.

    Line 1 is the kind, line 2 the parameters with 17 significant digits
    (lossless for binary64), line 3 the domain/range frame sizes.
    """
    params = " ".join(f"{v:.17g}" for v in t.params)
    scale = "scale {:.17g} {:.17g} {:.17g} {:.17g}".format(
        t.domain_scale[0], t.domain_scale[1], t.range_scale[0], t.range_scale[1]
    )
    return f"{t.kind}\n{params}\n{scale}\n"


def transform_from_text(text: str) -> Transform:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != 3:
        raise ValueError(f"transform text must have 3 lines, got {len(lines)}")
    kind = lines[0].strip()
    if kind not in PARAM_COUNTS:
        raise ValueError(f"unknown transform kind {kind!r}")
    try:
        params = np.array([float(tok) for tok in lines[1].split()], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"bad transform parameter: {exc}") from exc
    scale_toks = lines[2].split()
    if len(scale_toks) != 5 or scale_toks[0] != "scale":
        raise ValueError("transform line 3 must be 'scale dw dh rw rh'")
    try:
        dw, dh, rw, rh = (float(tok) for tok in scale_toks[1:])
    except ValueError as exc:
        raise ValueError(f"bad scale entry: {exc}") from exc
    return Transform(kind, params, (dw, dh), (rw, rh))


def save_transform(t: Transform, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(transform_to_text(t))


def load_transform(path) -> Transform:
    with open(path, "r", encoding="utf-8") as fh:
        return transform_from_text(fh.read())


@dataclass(frozen=True)
class EvaluationThresholds:
    """Dataset evaluation thresholds; t_sr is pinned to t_auc / 2."""

    t_auc: int
    t_sr: float = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if int(self.t_auc) != self.t_auc or self.t_auc < 1:
            raise ValueError(f"t_auc must be an integer >= 1, got {self.t_auc}")
        object.__setattr__(self, "t_auc", int(self.t_auc))
        expected = self.t_auc / 2.0
        if self.t_sr is None:
            object.__setattr__(self, "t_sr", expected)
        elif float(self.t_sr) != expected:
            raise ValueError(f"t_sr must equal t_auc/2 = {expected}, got {self.t_sr}")


_CONFIG_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


@dataclass(frozen=True)
class RegistrationConfig:
    """Knobs for one registration run; defaults follow the reference setup."""

    resample_size: int = 920
    keypoints_per_sampler: int = 1000
    min_keypoint_dist: float = 10.0
    t_ic: float = 3.0
    t_trans_stage1: float = 25.0
    t_trans_stage2: float = 15.0
    stage1_kind: str = "homography"
    stage2_kind: str = "poly3"  # "none" disables the second stage
    outlier_fit_kind: str = "affine"
    feature_source: str = "fmap_file"
    rng_seed: int = 0
    correlation_resolution: str = "full"

    def __post_init__(self) -> None:
        if self.resample_size <= 0:
            raise ValueError("resample_size must be positive")
        if self.keypoints_per_sampler < 0:
            raise ValueError("keypoints_per_sampler must be >= 0")
        for name in ("min_keypoint_dist", "t_ic", "t_trans_stage1", "t_trans_stage2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.stage1_kind not in TRANSFORM_KINDS:
            raise ValueError(f"stage1_kind must be one of {TRANSFORM_KINDS}")
        if self.stage2_kind not in TRANSFORM_KINDS + ("none",):
            raise ValueError(f"stage2_kind must be a transform kind or 'none'")
        if self.outlier_fit_kind not in TRANSFORM_KINDS:
            raise ValueError(f"outlier_fit_kind must be one of {TRANSFORM_KINDS}")
        if self.feature_source not in FEATURE_SOURCES:
            raise ValueError(f"feature_source must be one of {FEATURE_SOURCES}")
        if self.correlation_resolution not in CORRELATION_RESOLUTIONS:
            raise ValueError(f"correlation_resolution must be one of {CORRELATION_RESOLUTIONS}")

    def replace(self, **kwargs) -> "RegistrationConfig":
        return dataclasses.replace(self, **kwargs)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RegistrationConfig":
        """Build a config from string key/value pairs (config files, CLI)."""
        kwargs = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in mapping.items():
            name = key.strip().replace("-", "_")
            if name not in fields:
                raise ValueError(f"unknown config key {key!r}")
            ftype = fields[name].type
            value = raw
            if isinstance(raw, str):
                raw = raw.strip()
                if ftype == "int":
                    value = int(raw)
                elif ftype == "float":
                    value = float(raw)
                elif ftype == "bool":
                    value = _CONFIG_BOOL[raw.lower()]
                else:
                    value = raw
            kwargs[name] = value
        return cls(**kwargs)
