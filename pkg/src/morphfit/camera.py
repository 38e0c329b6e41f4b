"""Pinhole camera chain: rotations, translation, perspective divide.

Conventions (pinned by the regression tests, do not change silently):
  * right-handed model/camera space, y up, camera at the origin looking
    down -z; visible points have camera z < 0
  * rotation order: roll (z) first, then pitch (x), then yaw (y),
    then translation -- modelview = T * Ry * Rx * Rz
  * angles are degrees everywhere in the public API
  * screen origin is the top-left pixel corner area, u right, v down:
    u = cx + f*x/(-z), v = cy - f*y/(-z)
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class PoseParams:
    rx: float = 0.0  # pitch, degrees
    ry: float = 0.0  # yaw
    rz: float = 0.0  # roll
    tx: float = 0.0  # mm
    ty: float = 0.0
    tz: float = 0.0

    def as_array(self):
        return np.array([self.rx, self.ry, self.rz, self.tx, self.ty, self.tz])

    def __post_init__(self):
        if not np.all(np.isfinite([self.rx, self.ry, self.rz, self.tx, self.ty, self.tz])):
            raise ValueError("pose parameters must be finite")

    @staticmethod
    def from_array(values):
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        if v.shape[0] < 6:
            raise ValueError("pose needs 6 values [rx ry rz tx ty tz]")
        return PoseParams(*v[:6])


@dataclass
class CameraConfig:
    focal: float = 1500.0  # pixels
    width: int = 640
    height: int = 480
    cx: float = None
    cy: float = None

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if self.cx is None:
            self.cx = self.width / 2.0
        if self.cy is None:
            self.cy = self.height / 2.0


def rot_x(deg):
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rot_y(deg):
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rot_z(deg):
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def rotation_from_angles(rx, ry, rz):
    """Combined rotation Ry(ry) @ Rx(rx) @ Rz(rz), degrees."""
    return rot_y(ry) @ rot_x(rx) @ rot_z(rz)


def build_modelview(pose):
    """4x4 modelview T * Ry * Rx * Rz for the given pose."""
    m = np.eye(4)
    m[:3, :3] = rotation_from_angles(pose.rx, pose.ry, pose.rz)
    m[:3, 3] = [pose.tx, pose.ty, pose.tz]
    return m


def transform_points(points, modelview):
    """Apply a 4x4 to (n, 4) homogeneous points; returns (n, 3) camera space.

    Points are dehomogenized first, so any nonzero homogeneous scale gives
    the same result. A zero w component is rejected.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise ValueError("points must be (n, 4) homogeneous")
    w = pts[:, 3]
    if np.any(w == 0):
        raise ValueError("point at infinity (w = 0)")
    xyz = pts[:, :3] / w[:, None]
    return xyz @ modelview[:3, :3].T + modelview[:3, 3]


def project_points(points, pose, cam):
    """Project (n, 4) homogeneous model points to pixel coordinates.

    Returns (uv, valid): uv is (n, 2); rows with camera z >= -1e-6 (at or
    behind the camera plane) are NaN and flagged invalid.
    """
    pc = transform_points(points, build_modelview(pose))
    depth = -pc[:, 2]
    valid = depth > 1e-6
    uv = np.full((pc.shape[0], 2), np.nan)
    d = depth[valid]
    uv[valid, 0] = cam.cx + cam.focal * pc[valid, 0] / d
    uv[valid, 1] = cam.cy - cam.focal * pc[valid, 1] / d
    return uv, valid


def pose_from_landmarks_rough(points2d, points3d, cam):
    """Coarse pose from 2D/3D landmark correspondences.

    Depth comes from the ratio of bounding-box extents through the pinhole,
    x/y translation from centroid back-projection; all angles are left at
    zero. Good enough to land inside the trained cascade's basin; not an
    accurate pose.
    """
    uv = np.asarray(points2d, dtype=np.float64).reshape(-1, 2)
    pts = np.asarray(points3d, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] not in (3, 4):
        raise ValueError("points3d must be (n, 3) or (n, 4)")
    if pts.shape[1] == 4:
        pts = pts[:, :3] / pts[:, 3:4]
    if uv.shape[0] != pts.shape[0] or uv.shape[0] < 4:
        raise ValueError("need at least 4 matching 2D/3D points")

    ext_u = uv[:, 0].max() - uv[:, 0].min()
    ext_v = uv[:, 1].max() - uv[:, 1].min()
    ext_x = pts[:, 0].max() - pts[:, 0].min()
    ext_y = pts[:, 1].max() - pts[:, 1].min()
    if ext_u < 1e-9 or ext_v < 1e-9:
        raise ValueError("degenerate 2D landmark set")
    if ext_x < 1e-9 or ext_y < 1e-9:
        raise ValueError("degenerate 3D landmark set")

    depth = cam.focal * (ext_x + ext_y) / (ext_u + ext_v)
    tz = -depth
    cu, cv = uv.mean(axis=0)
    cx3, cy3 = pts[:, 0].mean(), pts[:, 1].mean()
    tx = (cu - cam.cx) * depth / cam.focal - cx3
    ty = (cam.cy - cv) * depth / cam.focal - cy3
    return PoseParams(0.0, 0.0, 0.0, tx, ty, tz)
