"""
Image features in voxel space
=============================

Every voxel centre is projected into the image and reads a bilinear blend
of the four surrounding pixel centres. Views are summed, point and image
grids are added, and training switches between the fused and single
modality grids at random.
"""

import numpy as np

from cycleprop.fuse import (
    LossInputs,
    VoxelGridSpec,
    build_projection_map,
    fuse_modalities,
    optimal_mu,
    resample_to_voxels,
    select_modality,
    sum_multiview,
    total_loss,
)
from cycleprop.geom import CameraModel, estimate_intrinsics, look_at

grid = VoxelGridSpec(origin=[-2, -2, 0], voxel_size=[0.25, 0.25, 0.25], dims=(16, 16, 8))
cams = [CameraModel(estimate_intrinsics(120, 160), look_at(eye, [0, 0, 1]), (120, 160)) for eye in ([6, 0, 2], [0, 6, 2])]

# %%
# A feature map that is a linear ramp in u is reproduced exactly.
rows, cols = np.mgrid[0:120, 0:160]
feat = np.stack([cols, rows]).astype(float)
grids = []
for cam in cams:
    pmap = build_projection_map(grid, cam)
    vox = resample_to_voxels(feat, pmap)
    u = pmap.pixels[pmap.valid.reshape(-1), 0]
    print(f"valid voxels {pmap.valid.sum()}, ramp error {np.abs(vox[0][pmap.valid] - u).max():.2e}")
    grids.append(vox)

fi = sum_multiview(grids)
fp = np.ones_like(fi)
fm = fuse_modalities(fp, fi)
print("fused grid shape:", fm.shape)

# %%
# The modality used for each training step.
print([m.value for m in select_modality((0.5, 0.25, 0.25), rng_seed=0, n=8)])

# %%
# The loss keeps the uncertainty weight mu; its best value is ln(sqrt 2 * A)
# where A is the sum of the two L1 terms.
x = LossInputs(l_cls=0.5, l1_3d=0.2, l1_2d=0.1, l_iou3d=0.3, l_iou2d=0.1)
mu = optimal_mu(x)
print(f"L(mu=0) = {total_loss(x):.6f}, mu* = {mu:.4f}, L(mu*) = {total_loss(LossInputs(0.5, 0.2, 0.1, 0.3, 0.1, mu)):.6f}")
