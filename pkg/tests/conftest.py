import numpy as np
import pytest

from cycleprop.geom import CameraModel, Intrinsics, Pose


@pytest.fixture
def identity_camera():
    """fx = fy = 480, principal point (320, 240), world frame = camera frame."""
    return CameraModel(Intrinsics(480.0, 480.0, 320.0, 240.0), Pose.identity(), (480, 640))


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
