import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from gazepercept.core import (
    BBox2D,
    BBox3D,
    GazeSample,
    PinholeCamera,
    PointCloud,
    Raster,
    RigidTransform,
    as_array,
    compose,
    invert,
    iou2d,
    iou2d_matrix,
    iou3d,
    matrix_to_quat,
    project,
    quat_to_matrix,
)
from gazepercept.errors import BehindCamera, FrameMismatch


def random_transform(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return RigidTransform(tuple(rng.normal(size=3)), tuple(q))


@st.composite
def transforms(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_transform(np.random.default_rng(seed))


@st.composite
def boxes(draw, lo=-20.0, hi=20.0):
    x = sorted(draw(st.lists(st.floats(lo, hi), min_size=2, max_size=2)))
    y = sorted(draw(st.lists(st.floats(lo, hi), min_size=2, max_size=2)))
    return BBox2D(x[0], y[0], x[1], y[1])


# -- types -------------------------------------------------------------------


def test_gaze_sample_validation():
    GazeSample(0.0, (1, 2))
    with pytest.raises(ValueError):
        GazeSample(-1.0, (1, 2))
    with pytest.raises(ValueError):
        GazeSample(0.0, (1, float("nan")))
    with pytest.raises(ValueError):
        GazeSample(0.0, (1,))


def test_bbox2d_rejects_swapped_corners():
    with pytest.raises(ValueError):
        BBox2D(5, 0, 1, 1)


def test_bbox3d_needs_positive_size():
    with pytest.raises(ValueError):
        BBox3D((0, 0, 0), (1, 0, 1))
    b = BBox3D.from_points([[0, 0, 0], [1, 2, 3]])
    assert b.center == (0.5, 1.0, 1.5)
    assert b.size == (1.0, 2.0, 3.0)


def test_rigid_transform_rejects_non_unit_quaternion():
    with pytest.raises(ValueError):
        RigidTransform((0, 0, 0), (1.0, 0.1, 0.0, 0.0))


def test_camera_principal_point_must_be_inside():
    with pytest.raises(ValueError):
        PinholeCamera(100, 100, 120, 40, 100, 80)
    with pytest.raises(ValueError):
        PinholeCamera(0, 100, 50, 40, 100, 80)


def test_raster_and_cloud_shapes():
    r = Raster(np.zeros((4, 5)))
    assert (r.height, r.width, r.channels) == (4, 5, 1)
    assert as_array(r).shape == (4, 5)
    with pytest.raises(ValueError):
        Raster(np.array([[np.inf]]))
    assert len(PointCloud(np.zeros(9))) == 3
    with pytest.raises(ValueError):
        PointCloud([[0, 0, np.nan]])


# -- transforms --------------------------------------------------------------


def test_compose_identity():
    out = compose(RigidTransform.identity(), RigidTransform.identity())
    assert_allclose(out.matrix(), np.eye(4), atol=1e-12)


def test_compose_translations():
    a = RigidTransform((1, 0, 0))
    b = RigidTransform((0, 2, 0))
    assert_allclose(compose(a, b).translation, (1, 2, 0))


def test_compose_applies_b_first():
    rz = RigidTransform.from_rotation_matrix([[0, -1, 0], [1, 0, 0], [0, 0, 1]])  # +90 deg about z
    shift = RigidTransform((1, 0, 0))
    # shift first, then rotate: (0,0,0) -> (1,0,0) -> (0,1,0)
    assert_allclose(compose(rz, shift).apply([0, 0, 0]), [0, 1, 0], atol=1e-12)


@settings(max_examples=100)
@given(transforms(), transforms())
def test_compose_matches_matrix_product(a, b):
    assert_allclose(compose(a, b).matrix(), a.matrix() @ b.matrix(), atol=1e-9)


@settings(max_examples=100)
@given(transforms(), transforms(), transforms())
def test_compose_is_associative(a, b, c):
    left = compose(compose(a, b), c).matrix()
    right = compose(a, compose(b, c)).matrix()
    assert_allclose(left, right, atol=1e-9)


@settings(max_examples=100)
@given(transforms())
def test_invert_is_two_sided(a):
    assert_allclose(compose(a, invert(a)).matrix(), np.eye(4), atol=1e-9)
    assert_allclose(compose(invert(a), a).matrix(), np.eye(4), atol=1e-9)
    assert_allclose(invert(compose(a, invert(a))).matrix(), np.eye(4), atol=1e-9)


def test_quaternion_matrix_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(200):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        R = quat_to_matrix(q)
        assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert_allclose(quat_to_matrix(matrix_to_quat(R)), R, atol=1e-12)


def test_apply_matches_homogeneous_oracle():
    rng = np.random.default_rng(2)
    T = random_transform(rng)
    pts = rng.normal(size=(20, 3))
    homo = np.c_[pts, np.ones(20)] @ T.matrix().T
    assert_allclose(T.apply(pts), homo[:, :3], atol=1e-12)


# -- projection --------------------------------------------------------------


CAM = PinholeCamera(100.0, 100.0, 50.0, 40.0, 100, 80)


def test_project_optical_axis():
    assert project(CAM, (0, 0, 1)) == (50.0, 40.0)


def test_project_hand_value():
    assert project(CAM, (1, 0, 2))[0] == 100.0


def test_project_behind_camera():
    with pytest.raises(BehindCamera):
        project(CAM, (0, 0, -1))
    with pytest.raises(BehindCamera):
        project(CAM, (0, 0, 0))


@given(st.floats(0, 99), st.floats(0, 79), st.floats(0.01, 100))
def test_back_project_round_trip(u, v, z):
    assert_allclose(project(CAM, CAM.back_project(u, v, z)), (u, v), atol=1e-6)


def test_project_many_marks_points_behind():
    uv, valid = CAM.project_many([[0, 0, 1], [0, 0, -1]])
    assert valid.tolist() == [True, False]
    assert np.isnan(uv[1]).all()


# -- IoU ---------------------------------------------------------------------


def test_iou2d_examples():
    a = BBox2D(0, 0, 10, 10)
    assert iou2d(a, a) == 1.0
    assert iou2d(a, BBox2D(20, 20, 30, 30)) == 0.0
    assert iou2d(a, BBox2D(5, 0, 15, 10)) == pytest.approx(1 / 3)


def _grid_iou(a: BBox2D, b: BBox2D, step: float) -> float:
    xs = np.arange(min(a.x1, b.x1), max(a.x2, b.x2), step) + step / 2
    ys = np.arange(min(a.y1, b.y1), max(a.y2, b.y2), step) + step / 2
    X, Y = np.meshgrid(xs, ys)
    ina = (X >= a.x1) & (X <= a.x2) & (Y >= a.y1) & (Y <= a.y2)
    inb = (X >= b.x1) & (X <= b.x2) & (Y >= b.y1) & (Y <= b.y2)
    union = (ina | inb).sum()
    return (ina & inb).sum() / union if union else 0.0


def test_iou2d_third_matches_grid_count():
    assert _grid_iou(BBox2D(0, 0, 10, 10), BBox2D(5, 0, 15, 10), 0.05) == pytest.approx(1 / 3, abs=1e-3)


def test_iou2d_random_boxes_match_grid_count():
    rng = np.random.default_rng(3)
    for _ in range(30):
        c = rng.uniform(0, 10, size=(2, 2))
        s = rng.uniform(1, 6, size=(2, 2))
        a = BBox2D(c[0, 0], c[0, 1], c[0, 0] + s[0, 0], c[0, 1] + s[0, 1])
        b = BBox2D(c[1, 0], c[1, 1], c[1, 0] + s[1, 0], c[1, 1] + s[1, 1])
        assert iou2d(a, b) == pytest.approx(_grid_iou(a, b, 0.01), abs=5e-3)  # grid discretisation error


@settings(max_examples=200)
@given(boxes(), boxes())
def test_iou2d_symmetric_and_bounded(a, b):
    v = iou2d(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou2d(b, a)


def test_iou2d_matrix_agrees():
    bs = [BBox2D(0, 0, 2, 2), BBox2D(1, 1, 3, 3), BBox2D(5, 5, 6, 6)]
    M = iou2d_matrix(bs, bs)
    assert_allclose(np.diag(M), 1.0)
    assert M[0, 1] == iou2d(bs[0], bs[1])


def test_iou3d_examples():
    a = BBox3D((0, 0, 0), (1, 1, 1))
    assert iou3d(a, a) == 1.0
    assert iou3d(a, BBox3D((0.5, 0, 0), (1, 1, 1))) == pytest.approx(1 / 3)
    assert iou3d(a, BBox3D((1, 0, 0), (1, 1, 1))) == 0.0


def test_iou3d_offset_matches_voxel_count():
    n = 40
    g = (np.arange(n * 2) + 0.5) / n - 0.5  # voxel centres over [-0.5, 1.5)
    X = g[:, None]
    ina = (X >= -0.5) & (X <= 0.5)
    inb = (X >= 0.0) & (X <= 1.0)
    # the other two axes coincide, so the 1-D ratio is the 3-D ratio
    assert (ina & inb).sum() / (ina | inb).sum() == pytest.approx(1 / 3, abs=0.02)


def test_iou3d_frame_mismatch():
    with pytest.raises(FrameMismatch):
        iou3d(BBox3D((0, 0, 0), (1, 1, 1), "a"), BBox3D((0, 0, 0), (1, 1, 1), "b"))


def test_transform_immutable():
    t = RigidTransform()
    with pytest.raises(Exception):
        t.translation = (1, 2, 3)
    assert math.isclose(np.linalg.norm(t.rotation), 1.0)
