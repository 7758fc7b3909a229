import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featreg.model import (
    CorrespondenceSet,
    DegenerateConfiguration,
    EvaluationThresholds,
    KeypointSet,
    Point2,
    RegistrationConfig,
    Transform,
    transform_from_text,
    transform_to_text,
    to_original_coords,
    to_resampled_coords,
)

from oracles import rescale_rational


def test_point_rejects_non_finite():
    with pytest.raises(ValueError):
        Point2(float("nan"), 0.0)
    with pytest.raises(ValueError):
        Point2(0.0, float("inf"))


def test_resampled_coords_origin_and_corner():
    assert to_resampled_coords(Point2(0, 0), 2912, 2912, 920) == Point2(0, 0)
    assert to_resampled_coords(Point2(2912, 2912), 2912, 2912, 920) == Point2(920, 920)


def test_resampled_coords_ratio():
    # Oracle: exact rational arithmetic, frozen here.
    assert rescale_rational(1456, 728, 2912, 2912, 920) == (460.0, 230.0)
    p = to_resampled_coords(Point2(1456, 728), 2912, 2912, 920)
    assert (p.x, p.y) == (460.0, 230.0)


def test_original_coords_inverts():
    p = to_original_coords(Point2(460, 230), 2912, 2912, 920)
    assert (p.x, p.y) == (1456.0, 728.0)
    assert to_original_coords(Point2(0, 0), 100, 50, 32) == Point2(0, 0)


def test_coords_anisotropic():
    # 751x420 original onto a 740 square: axes scale independently.
    p = to_resampled_coords(Point2(751, 420), 751, 420, 740)
    assert (p.x, p.y) == (740.0, 740.0)


def test_coords_reject_bad_dims():
    with pytest.raises(ValueError):
        to_resampled_coords(Point2(1, 1), 0, 10, 10)
    with pytest.raises(ValueError):
        to_original_coords(Point2(1, 1), 10, 10, -5)


@given(
    x=st.floats(-1e6, 1e6),
    y=st.floats(-1e6, 1e6),
    w=st.integers(1, 8192),
    h=st.integers(1, 8192),
    m=st.integers(1, 4096),
)
def test_coords_round_trip(x, y, w, h, m):
    p = Point2(x, y)
    q = to_original_coords(to_resampled_coords(p, w, h, m), w, h, m)
    assert abs(q.x - x) < 1e-9
    assert abs(q.y - y) < 1e-9


KIND_SIZES = {"affine": 6, "homography": 9, "quadratic": 12, "poly3": 20}


def _random_transform(kind, rng):
    if kind == "homography":
        params = np.concatenate([rng.normal(size=8) * [1, 0.3, 20, 0.3, 1, 20, 1e-4, 1e-4], [1.0]])
        params[0] += 1.0
        params[4] += 1.0
        return Transform(kind, params, (920, 920), (640, 480))
    params = rng.normal(size=KIND_SIZES[kind])
    return Transform(kind, params, (256, 256), (256, 256))


@pytest.mark.parametrize("kind", list(KIND_SIZES))
def test_transform_text_round_trip_bit_exact(kind):
    rng = np.random.default_rng(7)
    for _ in range(50):
        t = _random_transform(kind, rng)
        back = transform_from_text(transform_to_text(t))
        assert back.kind == t.kind
        assert np.array_equal(back.params, t.params)
        assert back.domain_scale == t.domain_scale
        assert back.range_scale == t.range_scale


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=6, max_size=6))
def test_affine_text_round_trip_any_finite(params):
    t = Transform("affine", np.array(params, dtype=np.float64))
    back = transform_from_text(transform_to_text(t))
    assert np.array_equal(back.params, t.params)


def test_transform_param_count_enforced():
    with pytest.raises(ValueError):
        Transform("affine", np.zeros(5))
    with pytest.raises(ValueError):
        Transform("poly3", np.zeros(12))
    with pytest.raises(ValueError):
        Transform("spline", np.zeros(6))


def test_homography_must_be_normalized_and_nonsingular():
    good = np.array([1, 0, 0, 0, 1, 0, 0, 0, 1], dtype=float)
    Transform("homography", good)
    with pytest.raises(ValueError):
        Transform("homography", good * 2.0)  # h33 != 1
    singular = np.array([1, 0, 0, 1, 0, 0, 0, 0, 1], dtype=float)
    with pytest.raises(DegenerateConfiguration):
        Transform("homography", singular)


def test_transform_text_rejects_malformed():
    with pytest.raises(ValueError):
        transform_from_text("affine\n1 2 3 4 5 6\n")  # missing scale line
    with pytest.raises(ValueError):
        transform_from_text("affine\n1 2 3 4 5 nope\nscale 1 1 1 1\n")
    with pytest.raises(ValueError):
        transform_from_text("affine\n1 2 3 4 5 6\nscale 1 1 1\n")
    with pytest.raises(ValueError):
        transform_from_text("warp\n1 2 3 4 5 6\nscale 1 1 1 1\n")


def test_evaluation_thresholds():
    th = EvaluationThresholds(25)
    assert th.t_sr == 12.5
    th = EvaluationThresholds(100)
    assert th.t_sr == 50.0
    with pytest.raises(ValueError):
        EvaluationThresholds(0)
    with pytest.raises(ValueError):
        EvaluationThresholds(25, t_sr=13.0)


def test_config_defaults_and_replace():
    cfg = RegistrationConfig()
    assert cfg.resample_size == 920
    assert cfg.stage1_kind == "homography"
    assert cfg.stage2_kind == "poly3"
    small = cfg.replace(resample_size=256, stage2_kind="none")
    assert small.resample_size == 256
    assert small.stage2_kind == "none"


def test_config_validation():
    with pytest.raises(ValueError):
        RegistrationConfig(resample_size=0)
    with pytest.raises(ValueError):
        RegistrationConfig(t_ic=-1)
    with pytest.raises(ValueError):
        RegistrationConfig(stage1_kind="rigid")
    with pytest.raises(ValueError):
        RegistrationConfig(correlation_resolution="half")


def test_config_from_mapping_coerces_strings():
    cfg = RegistrationConfig.from_mapping(
        {"resample-size": "256", "t_ic": "2.5", "stage2_kind": "none", "rng_seed": "42"}
    )
    assert cfg.resample_size == 256
    assert cfg.t_ic == 2.5
    assert cfg.stage2_kind == "none"
    assert cfg.rng_seed == 42
    with pytest.raises(ValueError):
        RegistrationConfig.from_mapping({"bogus_key": "1"})


def test_correspondence_set_validation():
    n = 4
    xy = np.arange(8, dtype=float).reshape(n, 2)
    sims = np.full(n, 0.5)
    status = np.zeros(n, dtype=np.int8)
    cs = CorrespondenceSet(xy, xy + 1, sims, status)
    assert len(cs) == 4
    assert cs.active_count == 4
    with pytest.raises(ValueError):
        CorrespondenceSet(xy, xy[:2], sims, status)
    with pytest.raises(ValueError):
        CorrespondenceSet(xy, xy, np.full(n, 1.5), status)


def test_correspondence_set_is_immutable():
    xy = np.zeros((2, 2))
    cs = CorrespondenceSet(xy, xy, np.zeros(2), np.zeros(2, dtype=np.int8))
    with pytest.raises(ValueError):
        cs.fixed_xy[0, 0] = 9.0


def test_keypoint_set_round_trip():
    ks = KeypointSet.from_xy(np.array([[1.5, 2.5], [3.0, 4.0]]), "random")
    assert len(ks) == 2
    kp = ks.keypoint(1)
    assert (kp.location.x, kp.location.y) == (3.0, 4.0)
    assert kp.source == "random"
    assert len(KeypointSet.empty()) == 0
