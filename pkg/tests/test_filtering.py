import numpy as np
import pytest

from featreg.filtering import (
    FilterReport,
    inverse_consistency_filter,
    run_filters,
    transform_residual_filter,
)
from featreg.model import (
    STATUS_ACTIVE,
    STATUS_REJECTED_IC,
    STATUS_REJECTED_RESIDUAL,
    CorrespondenceSet,
    InsufficientCorrespondences,
)
from featreg.transforms import apply_to_array

from oracles import apply_affine_scalar, fit_affine_normal_equations


def with_back(fixed, moving, back):
    return CorrespondenceSet.from_pairs(np.asarray(fixed, float),
                                        np.asarray(moving, float),
                                        np.asarray(back, float))


def circle_points(n, radius=50.0):
    ang = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])


def test_inverse_consistency_boundary_cases():
    fixed = [[10.0, 10.0], [0.0, 0.0], [0.0, 0.0]]
    back = [[10.0, 12.0], [3.0, 0.0], [3.0, 3.0]]
    corrs = with_back(fixed, fixed, back)
    out = inverse_consistency_filter(corrs, 3.0)
    # distance 2 kept; exactly 3 kept (inclusive); ~4.24 rejected
    assert out.status.tolist() == [STATUS_ACTIVE, STATUS_ACTIVE, STATUS_REJECTED_IC]


def test_inverse_consistency_requires_back_points():
    corrs = CorrespondenceSet.from_pairs([[0.0, 0.0]], [[0.0, 0.0]])
    with pytest.raises(ValueError, match="backward"):
        inverse_consistency_filter(corrs, 3.0)


def test_inverse_consistency_idempotent_and_preserves_coords():
    rng = np.random.default_rng(31)
    fixed = rng.uniform(0, 100, (50, 2))
    back = fixed + rng.normal(0, 3, (50, 2))
    corrs = with_back(fixed, fixed, back)
    once = inverse_consistency_filter(corrs, 3.0)
    twice = inverse_consistency_filter(once, 3.0)
    assert np.array_equal(once.status, twice.status)
    assert np.array_equal(once.fixed_xy, corrs.fixed_xy)
    assert np.array_equal(once.moving_xy, corrs.moving_xy)
    assert np.array_equal(once.back_xy, corrs.back_xy)


def test_residual_filter_keeps_exact_affine():
    rng = np.random.default_rng(5)
    fixed = rng.uniform(0, 200, (10, 2))
    params = [3.0, 1.1, -0.2, -7.0, 0.15, 0.9]
    moving = np.array([apply_affine_scalar(params, x, y) for x, y in fixed])
    out, fitted = transform_residual_filter(
        CorrespondenceSet.from_pairs(fixed, moving), "affine", 25.0)
    assert out.active_count == 10
    res = np.linalg.norm(apply_to_array(fitted, fixed) - moving, axis=1)
    assert np.all(res <= 1e-6)


def test_residual_filter_rejects_gross_outlier():
    # outlier at the ring centroid: it only drags the intercept, so the
    # nine inliers stay well under the threshold
    fixed = np.vstack([circle_points(9, 80.0) + 100.0, [[100.0, 100.0]]])
    moving = fixed.copy()
    moving[9] += [100.0, 0.0]
    # oracle: the least-squares fit leaves the displaced pair far out
    oparams = fit_affine_normal_equations(fixed, moving)
    ores = np.array([
        np.hypot(*(np.array(apply_affine_scalar(oparams, x, y)) - m))
        for (x, y), m in zip(fixed, moving)
    ])
    assert ores[9] > 25.0
    assert np.all(ores[:9] < 25.0)
    out, _ = transform_residual_filter(
        CorrespondenceSet.from_pairs(fixed, moving), "affine", 25.0)
    assert out.status[9] == STATUS_REJECTED_RESIDUAL
    assert out.active_count == 9


def test_residual_boundary_is_rejecting():
    # the fit is deterministic, so rerunning with t_trans equal to a
    # previously observed residual must reject that pair (>= semantics)
    rng = np.random.default_rng(13)
    fixed = rng.uniform(0, 100, (12, 2))
    moving = fixed.copy()
    moving[3] += [40.0, -10.0]
    corrs = CorrespondenceSet.from_pairs(fixed, moving)
    _, fitted = transform_residual_filter(corrs, "affine", 1e9)
    res = np.linalg.norm(apply_to_array(fitted, fixed) - moving, axis=1)
    out, _ = transform_residual_filter(corrs, "affine", float(res[3]))
    assert out.status[3] == STATUS_REJECTED_RESIDUAL
    out2, _ = transform_residual_filter(corrs, "affine", float(res[3]) + 1e-6)
    assert out2.status[3] == STATUS_ACTIVE


def test_residual_filter_insufficient_pairs():
    corrs = CorrespondenceSet.from_pairs([[0.0, 0.0], [5.0, 5.0]],
                                         [[0.0, 0.0], [5.0, 5.0]])
    with pytest.raises(InsufficientCorrespondences):
        transform_residual_filter(corrs, "affine", 25.0)


def test_residual_filter_counts_only_active():
    fixed = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]])
    status = np.array([0, 0, 1, 1], dtype=np.int8)
    corrs = CorrespondenceSet(fixed, fixed, np.ones(4), status)
    with pytest.raises(InsufficientCorrespondences):
        transform_residual_filter(corrs, "affine", 25.0)


def test_residual_filter_preserves_prior_rejections():
    rng = np.random.default_rng(3)
    fixed = rng.uniform(0, 100, (8, 2))
    status = np.zeros(8, dtype=np.int8)
    status[2] = STATUS_REJECTED_IC
    corrs = CorrespondenceSet(fixed, fixed, np.ones(8), status)
    out, _ = transform_residual_filter(corrs, "affine", 25.0)
    assert out.status[2] == STATUS_REJECTED_IC
    assert out.active_count == 7


def test_single_pass_masks_what_iteration_uncovers():
    # a huge outlier drags the fit toward a moderate one; one pass keeps
    # the moderate outlier, iterating to convergence removes it
    inliers = circle_points(20)
    fixed = np.vstack([inliers, [[0.0, 0.0]], [[0.0, 0.0]]])
    moving = fixed.copy()
    moving[20] += [0.0, 300.0]
    moving[21] += [0.0, 30.0]
    corrs = CorrespondenceSet.from_pairs(fixed, moving)
    one, _ = transform_residual_filter(corrs, "affine", 20.0, max_iterations=1)
    assert one.status[20] == STATUS_REJECTED_RESIDUAL
    assert one.status[21] == STATUS_ACTIVE
    deep, fitted = transform_residual_filter(corrs, "affine", 20.0, max_iterations=10)
    assert deep.status[21] == STATUS_REJECTED_RESIDUAL
    assert deep.active_count == 20
    # converged fit is the identity on the clean circle
    res = np.linalg.norm(apply_to_array(fitted, inliers) - inliers, axis=1)
    assert np.all(res <= 1e-9)


def test_kept_set_invariant_under_permutation():
    rng = np.random.default_rng(41)
    fixed = rng.uniform(0, 100, (30, 2))
    moving = fixed + rng.normal(0, 1, (30, 2))
    moving[5] += [80.0, 0.0]
    moving[17] += [0.0, -90.0]
    corrs = CorrespondenceSet.from_pairs(fixed, moving)
    out, _ = transform_residual_filter(corrs, "affine", 25.0)
    perm = rng.permutation(30)
    shuffled = CorrespondenceSet.from_pairs(fixed[perm], moving[perm])
    out_p, _ = transform_residual_filter(shuffled, "affine", 25.0)
    assert np.array_equal(out.status[perm], out_p.status)


def test_run_filters_report():
    rng = np.random.default_rng(59)
    fixed = rng.uniform(0, 100, (40, 2))
    moving = fixed + [2.0, 1.0]
    back = fixed.copy()
    back[:6] += [10.0, 0.0]  # six inconsistent loops
    moving[10] = fixed[10] + [70.0, 2.0]  # one residual outlier
    corrs = with_back(fixed, moving, back)
    filtered, report = run_filters(corrs, t_ic=3.0, t_trans=25.0)
    assert report.input_count == 40
    assert report.kept_after_ic == 34
    assert report.kept_after_residual == 33
    assert report.ic_threshold == 3.0
    assert report.residual_threshold == 25.0
    assert report.fitted_global.kind == "affine"
    assert filtered.active_count == 33
    assert report.as_dict()["fitted_global_kind"] == "affine"


def test_report_rejects_increasing_counts():
    from featreg.transforms import identity_transform
    with pytest.raises(ValueError):
        FilterReport(5, 6, 3, 3.0, 25.0, identity_transform("affine"))
