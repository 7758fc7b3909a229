"""Hand-rolled reference implementations used to cross-check the package.

Everything in this module favors obviousness over speed: scalar loops,
direct formulas, and no shared code with featreg itself. Tests compare
package output against these, so keep them dumb.
"""

from fractions import Fraction

import numpy as np


def rescale_rational(x, y, orig_w, orig_h, m):
    """Coordinate rescaling done in exact rational arithmetic."""
    fx = Fraction(x) * Fraction(m) / Fraction(orig_w)
    fy = Fraction(y) * Fraction(m) / Fraction(orig_h)
    return float(fx), float(fy)


def bilinear_scalar(plane, x, y):
    """Edge-clamped bilinear sample of one point on an align-corners grid."""
    h, w = plane.shape
    x = min(max(float(x), 0.0), w - 1.0)
    y = min(max(float(y), 0.0), h - 1.0)
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = plane[y0, x0] * (1 - fx) + plane[y0, x1] * fx
    bot = plane[y1, x0] * (1 - fx) + plane[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_scalar(plane, out_h, out_w):
    """Align-corners bilinear resize, one output sample at a time."""
    in_h, in_w = plane.shape
    out = np.zeros((out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        for j in range(out_w):
            sy = 0.0 if out_h == 1 else i * (in_h - 1) / (out_h - 1)
            sx = 0.0 if out_w == 1 else j * (in_w - 1) / (out_w - 1)
            out[i, j] = bilinear_scalar(plane, sx, sy)
    return out


def cosine_match_scalar(src_vec, dst_data):
    """Best dst pixel for one query vector by exhaustive scalar scan.

    dst_data is (C, H, W) with unit (or zero) pixel vectors; src_vec is
    length C and already normalized. Ties resolve to the smallest
    row-major linear index. Returns ((x, y), score).
    """
    c, h, w = dst_data.shape
    best_score = -np.inf
    best = (0, 0)
    for row in range(h):
        for col in range(w):
            s = 0.0
            for ch in range(c):
                s += float(src_vec[ch]) * float(dst_data[ch, row, col])
            if s > best_score:
                best_score = s
                best = (col, row)
    return best, best_score


def auc_enum(mles, t_auc):
    """Discrete AUC by explicit enumeration over integer thresholds.

    mles entries are floats, or None/inf for failed registrations; failed
    pairs never count as registered at any threshold.
    """
    hits = 0
    for t in range(1, t_auc + 1):
        for v in mles:
            if v is not None and np.isfinite(v) and v < t:
                hits += 1
    # single division: the exact rational value, rounded once
    return hits / (len(mles) * t_auc)


def success_rate_enum(mles, t_sr):
    hits = 0
    for v in mles:
        if v is not None and np.isfinite(v) and v <= t_sr:
            hits += 1
    return hits / len(mles)


def poly_eval_scalar(params, x, y, degree):
    """Direct monomial evaluation; params = x-coefs then y-coefs.

    Term order per coordinate: 1, x, y, then x^2, xy, y^2, then
    x^3, x^2 y, x y^2, y^3 (degree permitting).
    """
    terms = [1.0, x, y]
    if degree >= 2:
        terms += [x * x, x * y, y * y]
    if degree >= 3:
        terms += [x ** 3, x * x * y, x * y * y, y ** 3]
    n = len(terms)
    ox = sum(params[i] * terms[i] for i in range(n))
    oy = sum(params[n + i] * terms[i] for i in range(n))
    return ox, oy


def homography_exact_4pt(src, dst):
    """Solve the 4-point homography by the direct 8x8 linear system."""
    a = np.zeros((8, 8), dtype=np.float64)
    b = np.zeros(8, dtype=np.float64)
    for i in range(4):
        x, y = src[i]
        u, v = dst[i]
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        b[2 * i] = u
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i + 1] = v
    h = np.linalg.solve(a, b)
    return np.append(h, 1.0).reshape(3, 3)


def apply_homography_scalar(hmat, x, y):
    den = hmat[2, 0] * x + hmat[2, 1] * y + hmat[2, 2]
    u = (hmat[0, 0] * x + hmat[0, 1] * y + hmat[0, 2]) / den
    v = (hmat[1, 0] * x + hmat[1, 1] * y + hmat[1, 2]) / den
    return u, v


def fit_affine_normal_equations(fixed_xy, moving_xy):
    """Affine least squares via explicit normal equations (reference only)."""
    n = fixed_xy.shape[0]
    a = np.column_stack([np.ones(n), fixed_xy[:, 0], fixed_xy[:, 1]])
    ata = a.T @ a
    px = np.linalg.solve(ata, a.T @ moving_xy[:, 0])
    py = np.linalg.solve(ata, a.T @ moving_xy[:, 1])
    return np.concatenate([px, py])


def apply_affine_scalar(params, x, y):
    return (params[0] + params[1] * x + params[2] * y,
            params[3] + params[4] * x + params[5] * y)


def ransac_affine(fixed_xy, moving_xy, threshold, iters, rng):
    """Plain RANSAC affine estimator, used only as an ablation baseline."""
    n = fixed_xy.shape[0]
    best_inliers = None
    best_count = -1
    for _ in range(iters):
        idx = rng.choice(n, size=3, replace=False)
        try:
            params = fit_affine_normal_equations(fixed_xy[idx], moving_xy[idx])
        except np.linalg.LinAlgError:
            continue
        pred = np.column_stack(apply_affine_scalar(params, fixed_xy[:, 0], fixed_xy[:, 1]))
        resid = np.linalg.norm(pred - moving_xy, axis=1)
        inliers = resid < threshold
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
    if best_inliers is None or best_count < 3:
        return None
    return fit_affine_normal_equations(fixed_xy[best_inliers], moving_xy[best_inliers])
