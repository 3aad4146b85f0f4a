"""
Pseudo-labels for images without 3D annotation
==============================================

A class-agnostic 3D detector proposes boxes; their image footprints are
matched to annotated 2D boxes by minimum-cost assignment, and the 2D class
is handed to the matched 3D box.
"""

import numpy as np

from cycleprop.harness import SynthSpec, generate_synthetic_scene
from cycleprop.pseudo import NoiseSpec, build_cost_matrix, hungarian, make_pseudo_labels, simulate_agnostic_predictions

# %%
# The assignment solver on the smallest interesting case.
print(hungarian([[0.9, 0.1], [0.2, 0.8]]))

# %%
# A simulated detector with jitter, 10% missed objects and some spurious boxes.
scene = generate_synthetic_scene(SynthSpec(n_objects=5), rng_seed=3)
noise = NoiseSpec(center_sigma=0.05, size_sigma=0.05, yaw_sigma=0.05, drop_prob=0.1, spurious_rate=0.4)
preds = simulate_agnostic_predictions([o.box3d for o in scene.gt3d], scene.cameras[0], noise, rng_seed=3)
gt = [(o.class_id, o.box2d) for o in scene.gt2d[0]]
print(f"{len(gt)} annotated boxes, {len(preds)} class-agnostic proposals")
print(np.round(build_cost_matrix([b for _, b in gt], preds), 2))

# %%
# Pairs with IoU below 0.25 are rejected; everything else becomes a label for
# the noisy branch.
res = make_pseudo_labels(gt, preds)
for lab in res.labels:
    origin = preds[lab.pred_index].origin
    truth = scene.gt3d[origin].class_id if origin is not None else None
    print(f"class {lab.class_id} <- proposal {lab.pred_index} (IoU {lab.match_iou:.2f}, true class {truth})")
print("unmatched annotations:", res.unmatched)
