"""Estimation, application, composition, and warping of spatial transforms.

Four families are supported, all mapping fixed-image coordinates to
moving-image coordinates:

* affine: 6 parameters, monomials [1, x, y] per output coordinate
* homography: 3x3 projective matrix, normalized so h33 = 1 (8 free values)
* quadratic: 12 parameters, monomials [1, x, y, x^2, xy, y^2]
* poly3: 20 parameters, the quadratic list plus [x^3, x^2 y, x y^2, y^3]

Polynomial families are fitted by ordinary least squares per output
coordinate on an orthogonal decomposition (SVD-backed lstsq), never by
normal equations. Inputs are internally shifted/scaled into [-1, 1]^2
before fitting: raw cubic monomials reach ~1e9 at 1000-pixel coordinates,
which would eat most of the double mantissa. The de-scaling is folded back
into the stored parameters, so params always live in the coordinate frame
the caller supplied.

The homography is fitted by the normalized direct linear transform: both
point sets are translated to centroid origin and isotropically scaled to
mean distance sqrt(2), the 2n x 9 system's nullspace is taken from the
SVD, and the result is denormalized and scaled so h33 = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Union

import numpy as np

from .model import (
    MIN_PAIRS,
    CorrespondenceSet,
    DegenerateConfiguration,
    ImageBuffer,
    InsufficientCorrespondences,
    FeatureMap,
    Point2,
    PointAtInfinity,
    Transform,
)
from .tensor_io import bilinear_sample

# Monomial term order per kind; (i, j) means x^i * y^j. Fixed: this order
# is the parameter-serialization contract.
MONOMIAL_EXPONENTS = {
    "affine": ((0, 0), (1, 0), (0, 1)),
    "quadratic": ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)),
    "poly3": ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2),
              (3, 0), (2, 1), (1, 2), (0, 3)),
}

_POLY_DEGREE = {"affine": 1, "quadratic": 2, "poly3": 3}

# Relative singular-value cutoff below which the DLT system is treated as
# rank deficient (collinear or coincident input points).
_RANK_EPS = 1e-10


def identity_transform(kind: str = "affine",
                       domain_scale=(1.0, 1.0), range_scale=(1.0, 1.0)) -> Transform:
    if kind == "homography":
        params = np.eye(3, dtype=np.float64).ravel()
    elif kind in MONOMIAL_EXPONENTS:
        exps = MONOMIAL_EXPONENTS[kind]
        px = [1.0 if e == (1, 0) else 0.0 for e in exps]
        py = [1.0 if e == (0, 1) else 0.0 for e in exps]
        params = np.array(px + py, dtype=np.float64)
    else:
        raise ValueError(f"unknown transform kind {kind!r}")
    return Transform(kind, params, domain_scale, range_scale)


def translation_transform(dx: float, dy: float,
                          domain_scale=(1.0, 1.0), range_scale=(1.0, 1.0)) -> Transform:
    return Transform("affine", np.array([dx, 1.0, 0.0, dy, 0.0, 1.0]),
                     domain_scale, range_scale)


@dataclass(frozen=True)
class TransformChain:
    """Composite applicator; members apply left to right (innermost first)."""

    members: tuple

    def __post_init__(self) -> None:
        flat: List[Transform] = []
        for m in self.members:
            if isinstance(m, TransformChain):
                flat.extend(m.members)
            elif isinstance(m, Transform):
                flat.append(m)
            else:
                raise TypeError(f"chain member must be Transform or TransformChain, got {type(m)}")
        object.__setattr__(self, "members", tuple(flat))

    def as_affine(self) -> Transform:
        """Closed-form affine product; only valid if every member is affine."""
        if not all(m.kind == "affine" for m in self.members):
            raise ValueError("chain contains non-affine members")
        acc = np.eye(3)
        for m in self.members:
            p = m.params
            mat = np.array([[p[1], p[2], p[0]], [p[4], p[5], p[3]], [0, 0, 1.0]])
            acc = mat @ acc
        return Transform("affine",
                         np.array([acc[0, 2], acc[0, 0], acc[0, 1],
                                   acc[1, 2], acc[1, 0], acc[1, 1]]),
                         self.members[0].domain_scale if self.members else (1.0, 1.0),
                         self.members[-1].range_scale if self.members else (1.0, 1.0))


Applicator = Union[Transform, TransformChain]


def compose(outer: Applicator, inner: Applicator) -> TransformChain:
    """Composite evaluating outer(inner(p))."""
    return TransformChain((inner, outer))


def _monomial_matrix(kind: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    cols = [x ** i * y ** j if (i or j) else np.ones_like(x)
            for (i, j) in MONOMIAL_EXPONENTS[kind]]
    return np.column_stack(cols)


def _apply_array_raw(t: Transform, xy: np.ndarray):
    """Evaluate params on an (N, 2) array; returns (out_xy, valid_mask).

    valid_mask flags homography points whose projective denominator is
    usable; polynomial kinds are valid everywhere.
    """
    xy = np.asarray(xy, dtype=np.float64)
    x, y = xy[:, 0], xy[:, 1]
    if t.kind == "homography":
        h = t.params.reshape(3, 3)
        den = h[2, 0] * x + h[2, 1] * y + h[2, 2]
        valid = np.abs(den) > 1e-12
        safe = np.where(valid, den, 1.0)
        u = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / safe
        v = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / safe
        return np.column_stack([u, v]), valid
    basis = _monomial_matrix(t.kind, x, y)
    n_terms = basis.shape[1]
    u = basis @ t.params[:n_terms]
    v = basis @ t.params[n_terms:]
    return np.column_stack([u, v]), np.ones(xy.shape[0], dtype=bool)


def apply_to_array(t: Applicator, xy: np.ndarray) -> np.ndarray:
    """Apply a transform or chain to an (N, 2) array; raises PointAtInfinity."""
    out = np.asarray(xy, dtype=np.float64)
    members = t.members if isinstance(t, TransformChain) else (t,)
    for m in members:
        out, valid = _apply_array_raw(m, out)
        if not np.all(valid):
            idx = int(np.argmin(valid))
            raise PointAtInfinity(
                f"projective denominator vanished at point index {idx} "
                f"({xy[idx][0]}, {xy[idx][1]})"
            )
    return out


def apply_to_array_masked(t: Applicator, xy: np.ndarray):
    """Like apply_to_array but returns (out, valid_mask) instead of raising."""
    out = np.asarray(xy, dtype=np.float64)
    members = t.members if isinstance(t, TransformChain) else (t,)
    valid = np.ones(out.shape[0], dtype=bool)
    for m in members:
        out, ok = _apply_array_raw(m, out)
        valid &= ok
    return out, valid


def apply_transform(t: Applicator, pts: Sequence[Point2]):
    """Apply to Point2 sequences (or directly to an (N, 2) array)."""
    if isinstance(pts, np.ndarray):
        return apply_to_array(t, pts)
    xy = np.array([[p.x, p.y] for p in pts], dtype=np.float64).reshape(-1, 2)
    out = apply_to_array(t, xy)
    return [Point2(float(u), float(v)) for u, v in out]


def _active_pairs(corrs: CorrespondenceSet):
    mask = corrs.active_mask
    return corrs.fixed_xy[mask], corrs.moving_xy[mask]


def _fit_polynomial(kind: str, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    exps = MONOMIAL_EXPONENTS[kind]
    cx, cy = src.mean(axis=0)
    half_x = (src[:, 0].max() - src[:, 0].min()) / 2.0
    half_y = (src[:, 1].max() - src[:, 1].min()) / 2.0
    sx = half_x if half_x > 0 else 1.0
    sy = half_y if half_y > 0 else 1.0
    u = (src[:, 0] - cx) / sx
    v = (src[:, 1] - cy) / sy
    basis = np.column_stack([u ** i * v ** j if (i or j) else np.ones_like(u)
                             for (i, j) in exps])
    sol, _, rank, _ = np.linalg.lstsq(basis, dst, rcond=None)
    if rank < len(exps):
        raise DegenerateConfiguration(
            f"{kind} fit is rank deficient ({rank} < {len(exps)}); "
            "input points do not span the monomial basis"
        )
    px = _unscale_poly_coeffs(sol[:, 0], exps, cx, sx, cy, sy)
    py = _unscale_poly_coeffs(sol[:, 1], exps, cx, sx, cy, sy)
    return np.concatenate([px, py])


def _unscale_poly_coeffs(coeffs: np.ndarray, exps, cx: float, sx: float,
                         cy: float, sy: float) -> np.ndarray:
    # Expand sum_k c_k ((x-cx)/sx)^i ((y-cy)/sy)^j into raw monomials. The
    # substitution never raises the degree, so the same exponent list holds.
    acc = {e: 0.0 for e in exps}
    for c, (i, j) in zip(coeffs, exps):
        for a in range(i + 1):
            for b in range(j + 1):
                term = (c * sx ** -i * sy ** -j
                        * math.comb(i, a) * (-cx) ** (i - a)
                        * math.comb(j, b) * (-cy) ** (j - b))
                acc[(a, b)] += term
    return np.array([acc[e] for e in exps], dtype=np.float64)


def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity matrix sending pts to centroid 0, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    dists = np.linalg.norm(pts - centroid, axis=1)
    mean_dist = dists.mean()
    if mean_dist <= 1e-12:
        raise DegenerateConfiguration("all points coincide; homography undefined")
    s = math.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]],
                     [0.0, s, -s * centroid[1]],
                     [0.0, 0.0, 1.0]])


def _fit_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    t_src = _hartley_normalization(src)
    t_dst = _hartley_normalization(dst)
    ones = np.ones((src.shape[0], 1))
    sn = (t_src @ np.hstack([src, ones]).T).T
    dn = (t_dst @ np.hstack([dst, ones]).T).T
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    zeros = np.zeros_like(x)
    onesf = np.ones_like(x)
    rows_u = np.column_stack([x, y, onesf, zeros, zeros, zeros, -u * x, -u * y, -u])
    rows_v = np.column_stack([zeros, zeros, zeros, x, y, onesf, -v * x, -v * y, -v])
    a = np.empty((2 * src.shape[0], 9))
    a[0::2] = rows_u
    a[1::2] = rows_v
    _, sv, vt = np.linalg.svd(a)
    # sv has min(2n, 9) entries; rank below 8 means the solution space is
    # not one-dimensional (collinear points and similar degeneracies).
    if sv[7] <= _RANK_EPS * sv[0]:
        raise DegenerateConfiguration("homography system is rank deficient")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    if abs(h[2, 2]) <= 1e-12 * np.abs(h).max():
        raise DegenerateConfiguration("homography cannot be normalized (h33 ~ 0)")
    h = h / h[2, 2]
    if abs(float(np.linalg.det(h))) <= 1e-12:
        raise DegenerateConfiguration("fitted homography is singular")
    return h.ravel()


def fit_transform(kind: str, corrs: CorrespondenceSet,
                  domain_scale=(1.0, 1.0), range_scale=(1.0, 1.0)) -> Transform:
    """Least-squares fit of one transform family to active correspondences.

    Raises InsufficientCorrespondences below the family's minimum pair
    count, DegenerateConfiguration when the geometry does not determine
    the parameters.
    """
    if kind not in MIN_PAIRS:
        raise ValueError(f"unknown transform kind {kind!r}")
    src, dst = _active_pairs(corrs)
    if src.shape[0] < MIN_PAIRS[kind]:
        raise InsufficientCorrespondences(
            f"{kind} needs at least {MIN_PAIRS[kind]} pairs, got {src.shape[0]}"
        )
    if kind == "homography":
        params = _fit_homography(src, dst)
    else:
        params = _fit_polynomial(kind, src, dst)
    return Transform(kind, params, domain_scale, range_scale)


def rescale_transform(t: Transform, domain_size, range_size) -> Transform:
    """Re-express a transform in new domain/range frames, analytically.

    The input frame change x_fit = x_new * dw/DW (same for y) and output
    change u_new = u_fit * RW/rw are folded into the parameters, so the
    family is preserved exactly.
    """
    dw, dh = t.domain_scale
    rw, rh = t.range_scale
    new_dw, new_dh = float(domain_size[0]), float(domain_size[1])
    new_rw, new_rh = float(range_size[0]), float(range_size[1])
    ax = dw / new_dw
    ay = dh / new_dh
    bx = new_rw / rw
    by = new_rh / rh
    if t.kind == "homography":
        h = t.params.reshape(3, 3)
        out = np.diag([bx, by, 1.0]) @ h @ np.diag([ax, ay, 1.0])
        out = out / out[2, 2]
        params = out.ravel()
    else:
        exps = MONOMIAL_EXPONENTS[t.kind]
        n = len(exps)
        scale_in = np.array([ax ** i * ay ** j for (i, j) in exps])
        params = np.concatenate([t.params[:n] * scale_in * bx,
                                 t.params[n:] * scale_in * by])
    return Transform(t.kind, params, (new_dw, new_dh), (new_rw, new_rh))


def warp_image(moving: ImageBuffer, t: Applicator, out_w: int, out_h: int) -> ImageBuffer:
    """Pull-back warp: output(u) = moving sampled at t(u), zero outside."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output dimensions must be >= 1, got ({out_w}, {out_h})")
    gx, gy = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    mapped, valid = apply_to_array_masked(t, grid)
    in_w, in_h = moving.width, moving.height
    xs, ys = mapped[:, 0], mapped[:, 1]
    inside = valid & (xs >= 0.0) & (xs <= in_w - 1.0) & (ys >= 0.0) & (ys <= in_h - 1.0)
    if moving.samples.ndim == 2:
        vals = bilinear_sample(moving.samples, xs, ys)
        out = np.where(inside, vals, 0.0).reshape(out_h, out_w)
    else:
        planes = []
        for c in range(3):
            vals = bilinear_sample(moving.samples[:, :, c], xs, ys)
            planes.append(np.where(inside, vals, 0.0).reshape(out_h, out_w))
        out = np.stack(planes, axis=2)
    return ImageBuffer(out.astype(np.float32))


def warp_featuremap(fm: FeatureMap, t: Applicator, out_h: int, out_w: int) -> FeatureMap:
    """Per-channel pull-back warp of a feature tensor, zero fill outside."""
    gx, gy = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    mapped, valid = apply_to_array_masked(t, grid)
    xs, ys = mapped[:, 0], mapped[:, 1]
    inside = valid & (xs >= 0.0) & (xs <= fm.width - 1.0) & (ys >= 0.0) & (ys <= fm.height - 1.0)
    out = np.empty((fm.channels, out_h, out_w), dtype=np.float32)
    for c in range(fm.channels):
        vals = bilinear_sample(fm.data[c], xs, ys)
        out[c] = np.where(inside, vals, 0.0).reshape(out_h, out_w)
    return FeatureMap(out, normalized=False)
