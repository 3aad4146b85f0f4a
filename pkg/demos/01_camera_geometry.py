"""
Camera geometry and the extrinsic code
======================================

A camera looks at the origin from a few metres away. We project points,
encode its pose as eight numbers and decode it back.
"""

import math

import numpy as np

from cycleprop.geom import (
    CameraModel,
    Pose,
    decode_extrinsics,
    encode_extrinsics,
    estimate_intrinsics,
    look_at,
    project_points,
)

# %%
# Intrinsics can be guessed from the image size alone: focal length equal
# to the image height, principal point at the image centre.
K = estimate_intrinsics(480, 640)
print("intrinsics:", K)

# %%
# A camera 6 m away, 1.5 m up, aimed at a point half a metre above the floor.
pose = look_at([6.0, 2.0, 1.5], [0.0, 0.0, 0.5])
cam = CameraModel(K, pose, (480, 640))
print("camera centre:", np.round(pose.camera_center, 6))

pts = np.array([[0.0, 0.0, 0.5], [0.0, 0.0, 1.5], [10.0, 4.0, 1.5]])
uvd, valid = project_points(pts, cam)
for p, (u, v, d), ok in zip(pts, uvd, valid):
    print(f"{p} -> u={u:8.2f} v={v:8.2f} depth={d:6.2f} valid={ok}")

# %%
# The pose becomes [sin t, cos t, ux, uy, uz, tx, ty, tz]; decoding gives
# the rotation back to machine precision and the translation exactly.
code = encode_extrinsics(pose)
print("code:", np.round(code, 6))
back = decode_extrinsics(code)
print("rotation error:", np.linalg.norm(back.rotation - pose.rotation))
print("translation identical:", np.array_equal(back.translation, pose.translation))

# %%
# A half turn has two equally valid axes; the encoder picks the one whose
# first non-zero component is positive.
flip = Pose(np.diag([1.0, -1.0, -1.0]), np.zeros(3))
print("half turn code:", np.round(encode_extrinsics(flip)[:5], 12), "angle", math.pi)
