import numpy as np
import pytest

from morphfit import CameraConfig, PoseParams, build_modelview, pose_from_landmarks_rough, \
    project_points
from morphfit.camera import rotation_from_angles, transform_points

CAM = CameraConfig(focal=1500.0, width=640, height=480)


def test_zero_pose_is_identity():
    np.testing.assert_array_equal(build_modelview(PoseParams()), np.eye(4))


def test_pure_translation():
    m = build_modelview(PoseParams(tx=1, ty=2, tz=3))
    expected = np.eye(4)
    expected[:3, 3] = [1, 2, 3]
    np.testing.assert_array_equal(m, expected)


def test_yaw_90_rotates_x_to_minus_z():
    m = build_modelview(PoseParams(ry=90.0))
    p = m @ np.array([1.0, 0.0, 0.0, 1.0])
    np.testing.assert_allclose(p, [0.0, 0.0, -1.0, 1.0], atol=1e-12)


def test_projection_principal_point():
    uv, ok = project_points(np.array([[0.0, 0.0, 0.0, 1.0]]),
                            PoseParams(tz=-1200.0), CAM)
    assert ok.all()
    np.testing.assert_allclose(uv[0], [320.0, 240.0], atol=1e-9)


def test_projection_offset_point():
    # u = 320 + 1500*10/1200 = 332.5
    uv, _ = project_points(np.array([[10.0, 0.0, 0.0, 1.0]]),
                           PoseParams(tz=-1200.0), CAM)
    np.testing.assert_allclose(uv[0], [332.5, 240.0], atol=1e-9)


def test_projection_roll_180_flips_offset():
    uv, _ = project_points(np.array([[10.0, 0.0, 0.0, 1.0]]),
                           PoseParams(rz=180.0, tz=-1200.0), CAM)
    np.testing.assert_allclose(uv[0], [307.5, 240.0], atol=1e-9)


def test_rotations_orthonormal_1000_random_poses():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        rx, ry, rz = rng.uniform(-180, 180, 3)
        r = rotation_from_angles(rx, ry, rz)
        assert np.max(np.abs(r.T @ r - np.eye(3))) <= 1e-12
        assert abs(np.linalg.det(r) - 1.0) <= 1e-12


def test_rotation_order_pinned():
    # modelview rotation must equal Ry @ Rx @ Rz, written out analytically
    rx, ry, rz = np.radians([10.0, 20.0, 30.0])
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    expected = np.array([
        [cy * cz + sy * sx * sz, -cy * sz + sy * sx * cz, sy * cx],
        [cx * sz, cx * cz, -sx],
        [-sy * cz + cy * sx * sz, sy * sz + cy * sx * cz, cy * cx],
    ])
    got = build_modelview(PoseParams(rx=10.0, ry=20.0, rz=30.0))[:3, :3]
    np.testing.assert_allclose(got, expected, atol=1e-15)
    # and differs from the other composition order
    other = rotation_from_angles(0, 0, 30) @ rotation_from_angles(10, 0, 0) \
        @ rotation_from_angles(0, 20, 0)
    assert np.max(np.abs(got - other)) > 1e-3


def test_homogeneous_scale_invariance():
    rng = np.random.default_rng(9)
    pts = rng.normal(0, 40, (6, 3))
    hom = np.hstack([pts, np.ones((6, 1))])
    pose = PoseParams(rx=5, ry=-10, rz=3, tx=4, ty=-2, tz=-900)
    uv1, ok1 = project_points(hom, pose, CAM)
    for s in (2.0, -3.0, 0.25):
        uv2, ok2 = project_points(hom * s, pose, CAM)
        np.testing.assert_allclose(uv2, uv1, rtol=1e-12, atol=1e-9)
        assert np.array_equal(ok1, ok2)


def test_point_behind_camera_flagged():
    pts = np.array([[0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 1300.0, 1.0]])
    uv, ok = project_points(pts, PoseParams(tz=-1200.0), CAM)
    assert ok[0] and not ok[1]
    assert np.isnan(uv[1]).all()
    with pytest.raises(ValueError):
        transform_points(np.array([[1.0, 0.0, 0.0, 0.0]]), np.eye(4))


def test_rough_pose_recovers_depth(small_model):
    from morphfit import select_landmarks
    pts3d = select_landmarks(small_model, np.zeros(small_model.num_modes))
    pose = PoseParams(tz=-1200.0)
    uv, ok = project_points(pts3d, pose, CAM)
    assert ok.all()
    rough = pose_from_landmarks_rough(uv, pts3d, CAM)
    assert abs(rough.tz - (-1200.0)) <= 120.0  # within 10%
    assert rough.rx == rough.ry == rough.rz == 0.0


def test_rough_pose_translation_shift(small_model):
    from morphfit import select_landmarks
    pts3d = select_landmarks(small_model, np.zeros(small_model.num_modes))
    uv, _ = project_points(pts3d, PoseParams(tz=-1200.0), CAM)
    base = pose_from_landmarks_rough(uv, pts3d, CAM)
    shifted = pose_from_landmarks_rough(uv + [10.0, 0.0], pts3d, CAM)
    # tx moves by +10 * depth / focal, tz unchanged
    np.testing.assert_allclose(shifted.tx - base.tx, 10.0 * (-base.tz) / CAM.focal,
                               rtol=1e-9)
    assert shifted.tz == base.tz


def test_rough_pose_rejects_degenerate_input():
    with pytest.raises(ValueError):
        pose_from_landmarks_rough(np.zeros((3, 2)), np.zeros((3, 3)), CAM)
    same2d = np.tile([5.0, 5.0], (4, 1))
    with pytest.raises(ValueError):
        pose_from_landmarks_rough(same2d, np.random.default_rng(0).normal(size=(4, 3)), CAM)
