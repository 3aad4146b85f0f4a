import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import logm

from cycleprop.geom import (
    CameraModel,
    DegenerateCodeError,
    Intrinsics,
    InvalidArgumentError,
    Pose,
    camera_from_record,
    camera_to_record,
    decode_extrinsics,
    encode_extrinsics,
    estimate_intrinsics,
    look_at,
    project_points,
    rotation_from_axis_angle,
)

from conftest import random_rotation


@pytest.mark.parametrize(
    "h, w, expected",
    [
        (480, 640, (480, 480, 320, 240)),
        (1, 1, (1, 1, 0.5, 0.5)),
        (375, 1242, (375, 375, 621, 187.5)),
    ],
)
def test_estimate_intrinsics(h, w, expected):
    k = estimate_intrinsics(h, w)
    assert (k.fx, k.fy, k.px, k.py) == expected


@pytest.mark.parametrize("h, w", [(0, 10), (10, 0), (-3, 5)])
def test_estimate_intrinsics_rejects_bad_size(h, w):
    with pytest.raises(InvalidArgumentError):
        estimate_intrinsics(h, w)


def test_intrinsics_invariants():
    with pytest.raises(InvalidArgumentError):
        Intrinsics(0.0, 1.0, 0.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        Intrinsics(1.0, 1.0, float("nan"), 0.0)


def test_rotation_examples():
    np.testing.assert_array_equal(rotation_from_axis_angle([0, 0, 1], 0.0), np.eye(3))
    np.testing.assert_allclose(
        rotation_from_axis_angle([0, 0, 1], math.pi / 2), [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15
    )
    np.testing.assert_allclose(rotation_from_axis_angle([1, 0, 0], math.pi), np.diag([1, -1, -1]), atol=1e-15)


def test_rotation_renormalizes_axis_and_rejects_zero_axis():
    np.testing.assert_allclose(
        rotation_from_axis_angle([0, 0, 5], 0.3), rotation_from_axis_angle([0, 0, 1], 0.3), atol=1e-15
    )
    np.testing.assert_array_equal(rotation_from_axis_angle([0, 0, 0], 0.0), np.eye(3))
    with pytest.raises(InvalidArgumentError):
        rotation_from_axis_angle([0, 0, 0], 0.5)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3),
    st.floats(-10, 10),
)
def test_rotation_is_orthonormal(axis, theta):
    R = rotation_from_axis_angle(axis, theta)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1) < 1e-9


def test_encode_examples():
    np.testing.assert_array_equal(encode_extrinsics(Pose.identity()), [0, 1, 0, 0, 1, 0, 0, 0])
    R = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    np.testing.assert_array_equal(encode_extrinsics(Pose(R, [1, 2, 3])), [1, 0, 0, 0, 1, 1, 2, 3])


def test_encode_half_turn_axis_sign():
    code = encode_extrinsics(Pose(np.diag([1.0, -1, -1]), np.zeros(3)))
    np.testing.assert_allclose(code[:5], [0, -1, 1, 0, 0], atol=1e-15)
    code = encode_extrinsics(Pose(rotation_from_axis_angle([0, -1, -1], math.pi), np.zeros(3)))
    assert code[3] > 0 and code[4] > 0


def test_encode_matches_matrix_log(rng=np.random.default_rng(3)):
    # scipy's matrix logarithm gives theta * skew(u) independently of our path
    for _ in range(50):
        R = random_rotation(rng)
        code = encode_extrinsics(Pose(R, np.zeros(3)))
        L = np.real(logm(R))
        w = np.array([L[2, 1], L[0, 2], L[1, 0]])
        theta = np.linalg.norm(w)
        np.testing.assert_allclose(math.atan2(code[0], code[1]), theta, atol=1e-8)
        np.testing.assert_allclose(code[2:5], w / theta, atol=1e-8)


def test_decode_examples():
    assert decode_extrinsics([0, 1, 0, 0, 1, 0, 0, 0]) == Pose.identity()
    p = decode_extrinsics([2, 0, 0, 0, 5, 1, 1, 1])
    np.testing.assert_allclose(p.rotation, rotation_from_axis_angle([0, 0, 1], math.pi / 2), atol=1e-15)
    np.testing.assert_array_equal(p.translation, [1, 1, 1])
    with pytest.raises(DegenerateCodeError):
        decode_extrinsics([0, 0, 0, 0, 1, 0, 0, 0])
    with pytest.raises(DegenerateCodeError):
        decode_extrinsics([1, 0, 0, 0, 0, 0, 0, 0])


def test_decode_accepts_any_axis_at_zero_angle():
    assert decode_extrinsics([0, 1, 0.3, -0.2, 0.1, 0, 0, 0]) == Pose.identity()
    assert decode_extrinsics([0, 1, 0, 0, 0, 0, 0, 0]) == Pose.identity()


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-6, math.pi - 1e-6))
def test_extrinsics_round_trip(seed, theta):
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    R = rotation_from_axis_angle(axis, theta)
    T = rng.normal(size=3) * 10
    back = decode_extrinsics(encode_extrinsics(Pose(R, T)))
    assert np.linalg.norm(back.rotation - R) < 1e-9
    np.testing.assert_array_equal(back.translation, T)


def test_project_examples(identity_camera):
    uvd, valid = project_points([[0, 0, 2], [1, 0, 2], [0, 0, -1]], identity_camera)
    np.testing.assert_array_equal(uvd[0], [320, 240, 2])
    np.testing.assert_array_equal(uvd[1], [560, 240, 2])
    assert valid.tolist() == [True, True, False]
    assert np.isnan(uvd[2, :2]).all() and uvd[2, 2] == -1


def test_project_keeps_alignment_and_near_plane(identity_camera):
    uvd, valid = project_points([[0, 0, 1e-6], [0, 0, 2e-6], [5, 5, 5]], identity_camera)
    assert valid.tolist() == [False, True, True]
    assert uvd.shape == (3, 3)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
    st.floats(0.1, 5),
    st.floats(0.01, 100),
)
def test_projection_is_scale_consistent(xy, z, lam):
    cam = CameraModel(Intrinsics(480.0, 480.0, 320.0, 240.0), Pose.identity(), (480, 640))
    p = np.array([xy[0], xy[1], z])
    a, _ = project_points(p, cam)
    b, _ = project_points(lam * p, cam)
    np.testing.assert_allclose(a[0, :2], b[0, :2], rtol=1e-12, atol=1e-9)


def test_projection_matches_matrix_form():
    rng = np.random.default_rng(7)
    pose = Pose(random_rotation(rng), rng.normal(size=3))
    cam = CameraModel(Intrinsics(500.0, 510.0, 300.0, 200.0), pose, (400, 600))
    pts = rng.normal(size=(20, 3)) * 3
    uvd, valid = project_points(pts, cam)
    hom = (cam.projection_matrix @ np.c_[pts, np.ones(len(pts))].T).T
    ok = hom[:, 2] > 1e-6
    np.testing.assert_array_equal(valid, ok)
    np.testing.assert_allclose(uvd[ok, :2], hom[ok, :2] / hom[ok, 2:], rtol=1e-10)


def test_pose_invariants():
    with pytest.raises(InvalidArgumentError):
        Pose(np.diag([1.0, 1, -1]), np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        Pose(np.eye(3) * 2, np.zeros(3))


def test_look_at_points_optical_axis_at_target():
    pose = look_at([5, 0, 1.5], [0, 0, 0.5])
    cam = CameraModel(estimate_intrinsics(480, 640), pose, (480, 640))
    uvd, valid = project_points([[0, 0, 0.5]], cam)
    np.testing.assert_allclose(uvd[0, :2], [320, 240], atol=1e-9)
    np.testing.assert_allclose(pose.camera_center, [5, 0, 1.5], atol=1e-12)
    # world up projects upward in the image (smaller v)
    up, _ = project_points([[0, 0, 1.5]], cam)
    assert up[0, 1] < 240


def test_camera_record_round_trip():
    pose = look_at([3, 4, 2], [0, 0, 0])
    cam = CameraModel(Intrinsics(400.0, 410.0, 310.0, 230.0), pose, (480, 640))
    back = camera_from_record(camera_to_record(cam))
    assert back.intrinsics == cam.intrinsics and back.image_size == (480, 640)
    assert np.linalg.norm(back.pose.rotation - pose.rotation) < 1e-12


def test_camera_record_without_intrinsics_estimates_them():
    rec = {"height": 375, "width": 1242, "extrinsic_code": [0, 1, 0, 0, 1, 0, 0, 0]}
    cam = camera_from_record(rec)
    assert cam.intrinsics == estimate_intrinsics(375, 1242)


def test_camera_rejects_bad_image_size():
    with pytest.raises(InvalidArgumentError):
        CameraModel(estimate_intrinsics(4, 4), Pose.identity(), (0, 4))
