"""
Lifting 2D detections into 3D boxes
===================================

Each 2D box selects the points in its frustum. Density clustering removes
background points and a box is fitted to what remains.
"""

import numpy as np

from cycleprop.boxes import iou_3d
from cycleprop.harness import SynthSpec, generate_synthetic_scene
from cycleprop.lift import Detection2D, FusionParams, PointCloud, fuse_inference, lift_detections

# %%
# A synthetic room with five boxes and points on their surfaces, lightly
# jittered. Its 2D ground truth stands in for an open-vocabulary 2D detector.
scene = generate_synthetic_scene(SynthSpec(n_objects=5, points_per_object=300, point_noise=0.02), rng_seed=7)
dets2d = [[Detection2D(o.box2d, o.class_id, 0.9) for o in view] for view in scene.gt2d]
print(f"{len(scene.points)} points, {len(dets2d[0])} 2D detections")

# %%
res = lift_detections(PointCloud(scene.points), scene.cameras, dets2d, yaw_mode="bev_min_area")
for det in res.detections:
    best = max(iou_3d(det.box3d, o.box3d) for o in scene.gt3d)
    print(f"class {det.class_id}: best IoU with ground truth {best:.3f}")
print("skipped:", [s.to_record() for s in res.skipped])

# %%
# At inference the lifted boxes join the detector's own predictions with
# halved scores; per-class NMS then removes duplicates.
model = [d for d in res.detections[:2]]
fused = fuse_inference(model, res.detections, FusionParams())
print("fused scores:", sorted(np.round([d.score for d in fused], 3).tolist(), reverse=True))
