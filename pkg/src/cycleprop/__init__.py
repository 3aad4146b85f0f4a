"""Geometry, matching and evaluation tools for cross-modal 3D pseudo-labelling."""

from .boxes import (
    Box2D,
    Box3D,
    Detection,
    Source,
    corners_3d,
    giou_2d,
    iou_2d,
    iou_3d,
    iou_3d_axis_aligned,
    nms_3d,
    project_box3d_to_2d,
)
from .geom import (
    CameraModel,
    Intrinsics,
    Pose,
    decode_extrinsics,
    encode_extrinsics,
    estimate_intrinsics,
    look_at,
    project_points,
    rotation_from_axis_angle,
)

__version__ = "0.1.0"
