"""
Box overlap and suppression
===========================

Rotated 3D IoU, its axis-aligned special case, and greedy 3D NMS.
"""

import math

from cycleprop.boxes import Box3D, Detection, corners_3d, iou_3d, iou_3d_axis_aligned, nms_3d

# %%
# Two unit cubes sharing a centre, one turned by 45 degrees. The overlap in
# bird's-eye view is an octagon of area 2(sqrt 2 - 1), so the IoU is
# sqrt(2)/2.
a = Box3D(0, 0, 0, 1, 1, 1)
b = Box3D(0, 0, 0, 1, 1, 1, math.pi / 4)
print("rotated IoU:", iou_3d(a, b), "expected", math.sqrt(2) / 2)
print("ignoring yaw:", iou_3d_axis_aligned(a, b))

# %%
# Corner order: bottom face counter-clockwise from (+l/2, +w/2), then the top.
print(corners_3d(Box3D(0, 0, 0, 2, 1, 1)))

# %%
# NMS keeps the best-scoring box of each overlapping group. In per-class
# mode a chair never suppresses a table in the same place.
dets = [
    Detection(Box3D(0, 0, 0, 1, 1, 1), class_id=0, score=0.9),
    Detection(Box3D(0.1, 0, 0, 1, 1, 1), class_id=0, score=0.8),
    Detection(Box3D(0, 0, 0, 1, 1, 1), class_id=1, score=0.7),
    Detection(Box3D(3, 0, 0, 1, 1, 1), class_id=0, score=0.6),
]
for per_class in (False, True):
    kept = nms_3d(dets, 0.25, per_class=per_class)
    print(f"per_class={per_class}:", [(d.class_id, d.score) for d in kept])
