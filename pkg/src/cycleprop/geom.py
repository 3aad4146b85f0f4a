"""Pinhole cameras, the 8-parameter extrinsic code, and world-to-image projection.

Conventions
-----------
* ``Pose`` maps world coordinates into the camera frame: ``p_cam = R @ p + T``.
* The camera frame has x to the right, y down and z along the optical axis.
* Pixel coordinates ``(u, v)`` run along the image width and height with the
  origin at the top-left corner. Integer coordinates are pixel centres, so
  pixel ``(row i, col j)`` is centred at ``(u=j, v=i)`` and the image covers
  ``[-0.5, width - 0.5] x [-0.5, height - 0.5]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS_DEPTH = 1e-6
"""Points with camera-frame depth at or below this value (metres) are invalid."""

THETA_ZERO = 1e-9
CANONICAL_AXIS = (0.0, 0.0, 1.0)


class InvalidArgumentError(ValueError):
    pass


class DegenerateCodeError(ValueError):
    """An extrinsic code does not describe a rotation."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    px: float
    py: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (math.isfinite(self.px) and math.isfinite(self.py)):
            raise InvalidArgumentError("principal point must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.px], [0.0, self.fy, self.py], [0.0, 0.0, 1.0]])

    def as_list(self) -> list[float]:
        return [self.fx, self.fy, self.px, self.py]


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid world-to-camera transform ``[R | T]``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        T = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0):
            raise InvalidArgumentError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise InvalidArgumentError("rotation must have determinant +1")
        if not np.all(np.isfinite(T)):
            raise InvalidArgumentError("translation must be finite")
        R.flags.writeable = False
        T.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        """The 3x4 extrinsic matrix."""
        return np.hstack([self.rotation, self.translation[:, None]])

    @property
    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates, ``-R^T T``."""
        return -self.rotation.T @ self.translation

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None


@dataclass(frozen=True)
class CameraModel:
    intrinsics: Intrinsics
    pose: Pose
    image_size: tuple[int, int]  # (height, width)

    def __post_init__(self):
        h, w = self.image_size
        if int(h) != h or int(w) != w or h <= 0 or w <= 0:
            raise InvalidArgumentError(f"image_size must be positive integers, got {self.image_size}")
        object.__setattr__(self, "image_size", (int(h), int(w)))

    @property
    def height(self) -> int:
        return self.image_size[0]

    @property
    def width(self) -> int:
        return self.image_size[1]

    @property
    def projection_matrix(self) -> np.ndarray:
        """``K @ [R | T]`` (3x4)."""
        return self.intrinsics.matrix @ self.pose.matrix


def estimate_intrinsics(height, width) -> Intrinsics:
    """Intrinsics guessed from the image resolution alone.

    Both focal lengths are set to the image height and the principal point to
    the image centre.
    """
    if not (height > 0 and width > 0):
        raise InvalidArgumentError(f"image dimensions must be positive, got ({height}, {width})")
    return Intrinsics(fx=float(height), fy=float(height), px=width / 2.0, py=height / 2.0)


def _skew(u):
    return np.array([[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]])


def _rotation_from_sin_cos(axis, s, c):
    u = np.asarray(axis, dtype=float)
    K = _skew(u)
    return c * np.eye(3) + s * K + (1.0 - c) * np.outer(u, u)


def rotation_from_axis_angle(axis, theta: float) -> np.ndarray:
    """Rodrigues rotation by ``theta`` radians about ``axis`` (renormalized)."""
    axis = np.asarray(axis, dtype=float).reshape(3)
    norm = np.linalg.norm(axis)
    if norm < 1e-12:
        if abs(theta) > THETA_ZERO:
            raise InvalidArgumentError("zero rotation axis with nonzero angle")
        return np.eye(3)
    return _rotation_from_sin_cos(axis / norm, math.sin(theta), math.cos(theta))


def _canonical_sign(u):
    for comp in u:
        if comp != 0.0:
            return u if comp > 0 else -u
    return u


def axis_angle_from_rotation(R) -> tuple[np.ndarray, float, float, float]:
    """Matrix logarithm of a rotation.

    Returns ``(axis, theta, sin_theta, cos_theta)`` with ``theta`` in
    ``[0, pi]``. The axis is ``(0, 0, 1)`` when ``theta < 1e-9``; at
    ``theta = pi`` its first nonzero component is positive.
    """
    R = np.asarray(R, dtype=float)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s_raw = float(np.linalg.norm(w))
    c_raw = 0.5 * (float(np.trace(R)) - 1.0)
    r = math.hypot(s_raw, c_raw)
    s, c = s_raw / r, c_raw / r
    theta = math.atan2(s, c)
    if theta < THETA_ZERO:
        return np.array(CANONICAL_AXIS), 0.0, 0.0, 1.0
    if c >= 0.0:
        axis = w / s_raw
    else:
        # near pi the skew part vanishes; read the axis off (1 - cos) u u^T
        B = 0.5 * (R + R.T) - c * np.eye(3)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.linalg.norm(B[:, k])
        if s_raw > 1e-12:
            axis = axis if axis @ w >= 0 else -axis
        else:
            axis = _canonical_sign(axis)
    axis = axis / np.linalg.norm(axis)
    return axis, theta, s, c


def encode_extrinsics(pose: Pose) -> np.ndarray:
    """Pose as ``[sin t, cos t, ux, uy, uz, tx, ty, tz]``."""
    axis, _, s, c = axis_angle_from_rotation(pose.rotation)
    return np.concatenate([[s, c], axis, pose.translation])


def decode_extrinsics(code) -> Pose:
    """Inverse of :func:`encode_extrinsics`.

    The ``(sin, cos)`` pair and the axis are normalized first, so raw network
    outputs can be fed in directly.
    """
    code = np.asarray(code, dtype=float).reshape(8)
    if not np.all(np.isfinite(code)):
        raise DegenerateCodeError("extrinsic code has non-finite entries")
    s, c = code[0], code[1]
    r = math.hypot(s, c)
    if r < 1e-12:
        raise DegenerateCodeError("sin/cos pair is zero")
    s, c = s / r, c / r
    axis = code[2:5]
    norm = np.linalg.norm(axis)
    theta = math.atan2(s, c)
    if norm < 1e-12:
        if abs(theta) > THETA_ZERO:
            raise DegenerateCodeError("zero rotation axis with nonzero angle")
        R = np.eye(3)
    else:
        R = _rotation_from_sin_cos(axis / norm, s, c)
    return Pose(R, code[5:8].copy())


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Pose of a camera at ``eye`` whose optical axis points at ``target``."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    if np.linalg.norm(right) < 1e-12:
        raise InvalidArgumentError("viewing direction is parallel to the up vector")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return Pose(R, -R @ eye)


def project_points(points, camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Project world points into the image.

    Parameters
    ----------
    points : (N, 3) array
        World coordinates in metres.
    camera : CameraModel

    Returns
    -------
    uvd : (N, 3) array
        Pixel coordinates ``u, v`` and camera-frame depth. ``u`` and ``v`` are
        NaN where the point is invalid.
    valid : (N,) bool array
        False for points with depth ``<= EPS_DEPTH``. Rows are never dropped.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    R, T = camera.pose.rotation, camera.pose.translation
    p_cam = pts @ R.T + T
    depth = p_cam[:, 2]
    valid = depth > EPS_DEPTH
    k = camera.intrinsics
    uvd = np.full((len(pts), 3), np.nan)
    uvd[:, 2] = depth
    z = depth[valid]
    uvd[valid, 0] = k.fx * (p_cam[valid, 0] / z) + k.px
    uvd[valid, 1] = k.fy * (p_cam[valid, 1] / z) + k.py
    return uvd, valid


def camera_to_record(camera: CameraModel) -> dict:
    """Camera file record ``{height, width, intrinsics, extrinsic_code}``."""
    return {
        "height": camera.height,
        "width": camera.width,
        "intrinsics": camera.intrinsics.as_list(),
        "extrinsic_code": [float(x) for x in encode_extrinsics(camera.pose)],
    }


def camera_from_record(record: dict) -> CameraModel:
    """Build a camera from a file record; missing intrinsics are estimated."""
    h, w = int(record["height"]), int(record["width"])
    if record.get("intrinsics") is not None:
        intr = Intrinsics(*map(float, record["intrinsics"]))
    else:
        intr = estimate_intrinsics(h, w)
    return CameraModel(intr, decode_extrinsics(record["extrinsic_code"]), (h, w))
