"""Voxel-space image features, modality fusion and the uncertainty-weighted loss.

Image features are pulled into a voxel grid by projecting every voxel centre
through the camera and interpolating bilinearly between the four surrounding
pixel centres. Multi-view grids are summed, point and image grids are added
after a (caller-supplied) regularizer, and training picks one of the fused,
point-only or image-only grids at random.
"""

from __future__ import annotations

import enum
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .geom import CameraModel, InvalidArgumentError, project_points

SQRT2 = math.sqrt(2.0)
DEFAULT_MODALITY_PROBS = (0.5, 0.25, 0.25)


@dataclass(frozen=True, eq=False)
class VoxelGridSpec:
    origin: np.ndarray
    voxel_size: np.ndarray
    dims: tuple[int, int, int]

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        size = np.asarray(self.voxel_size, dtype=float).reshape(3)
        dims = tuple(int(d) for d in self.dims)
        if np.any(size <= 0):
            raise InvalidArgumentError("voxel_size must be positive")
        if len(dims) != 3 or min(dims) < 1:
            raise InvalidArgumentError("dims must be three positive counts")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "voxel_size", size)
        object.__setattr__(self, "dims", dims)

    def centers(self) -> np.ndarray:
        """Voxel centres, (X*Y*Z, 3), in C order over ``(x, y, z)`` indices."""
        ix, iy, iz = np.meshgrid(*(np.arange(d) for d in self.dims), indexing="ij")
        idx = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)
        return self.origin + (idx + 0.5) * self.voxel_size

    def to_record(self) -> dict:
        return {"origin": self.origin.tolist(), "voxel_size": self.voxel_size.tolist(), "dims": list(self.dims)}

    @classmethod
    def from_record(cls, rec: dict) -> VoxelGridSpec:
        return cls(rec["origin"], rec["voxel_size"], tuple(rec["dims"]))


@dataclass(frozen=True, eq=False)
class ProjectionMap:
    """Per-voxel bilinear sampling stencil.

    ``indices`` holds flat pixel indices ``row * W + col`` of the four
    neighbouring pixel centres and ``weights`` their bilinear weights; both
    are zero for invalid voxels.
    """

    dims: tuple[int, int, int]
    image_size: tuple[int, int]
    valid: np.ndarray  # (X, Y, Z) bool
    indices: np.ndarray  # (X*Y*Z, 4) int
    weights: np.ndarray  # (X*Y*Z, 4) float
    pixels: np.ndarray  # (X*Y*Z, 2) projected (u, v) in camera image pixels, NaN if invalid


def build_projection_map(grid: VoxelGridSpec, camera: CameraModel, image_size=None) -> ProjectionMap:
    """Project voxel centres into a feature map of ``image_size = (H, W)``.

    ``image_size`` defaults to the camera image size; a smaller feature map is
    treated as a uniform downsampling of the camera image, pixel centres
    included. A voxel is valid when it lies in front of the camera and its
    feature-map coordinate falls inside the hull of pixel centres
    ``[0, W-1] x [0, H-1]``.
    """
    H, W = camera.image_size if image_size is None else (int(image_size[0]), int(image_size[1]))
    uvd, valid = project_points(grid.centers(), camera)
    sx, sy = W / camera.width, H / camera.height
    if sx == 1.0 and sy == 1.0:
        fu, fv = uvd[:, 0], uvd[:, 1]
    else:
        fu = (uvd[:, 0] + 0.5) * sx - 0.5
        fv = (uvd[:, 1] + 0.5) * sy - 0.5
    with np.errstate(invalid="ignore"):
        valid = valid & (fu >= 0) & (fu <= W - 1) & (fv >= 0) & (fv <= H - 1)
    n = len(valid)
    indices = np.zeros((n, 4), dtype=np.int64)
    weights = np.zeros((n, 4))
    u, v = fu[valid], fv[valid]
    c0 = np.minimum(np.floor(u).astype(np.int64), W - 1)
    r0 = np.minimum(np.floor(v).astype(np.int64), H - 1)
    c1 = np.minimum(c0 + 1, W - 1)
    r1 = np.minimum(r0 + 1, H - 1)
    du, dv = u - c0, v - r0
    indices[valid] = np.stack([r0 * W + c0, r0 * W + c1, r1 * W + c0, r1 * W + c1], axis=1)
    weights[valid] = np.stack([(1 - du) * (1 - dv), du * (1 - dv), (1 - du) * dv, du * dv], axis=1)
    pixels = uvd[:, :2].copy()
    pixels[~valid] = np.nan
    return ProjectionMap(grid.dims, (H, W), valid.reshape(grid.dims), indices, weights, pixels)


def resample_to_voxels(feat, pmap: ProjectionMap) -> np.ndarray:
    """Bilinearly sample a (C, H, W) feature map at every voxel; invalid voxels are zero."""
    feat = np.asarray(feat)
    if feat.ndim != 3 or feat.shape[1:] != pmap.image_size:
        raise InvalidArgumentError(f"feature map shape {feat.shape} does not match projection map {pmap.image_size}")
    C = feat.shape[0]
    flat = feat.reshape(C, -1)
    valid = pmap.valid.reshape(-1)
    out = np.zeros((C, valid.size), dtype=np.result_type(feat.dtype, np.float64))
    idx, w = pmap.indices[valid], pmap.weights[valid]
    out[:, valid] = np.einsum("cvk,vk->cv", flat[:, idx], w)
    return out.reshape((C,) + pmap.dims)


def _same_shapes(grids):
    shapes = {np.shape(g) for g in grids}
    if len(shapes) != 1:
        raise InvalidArgumentError(f"grid shapes differ: {sorted(shapes)}")


def sum_multiview(grids: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise sum of per-view voxel feature grids."""
    if len(grids) == 0:
        raise InvalidArgumentError("no grids to sum")
    _same_shapes(grids)
    out = np.array(grids[0], copy=True)
    for g in grids[1:]:
        out = out + g
    return out


def fuse_modalities(
    fp, fi, regularize_points: Optional[Callable] = None, regularize_images: Optional[Callable] = None
) -> np.ndarray:
    """Multimodal voxel features: ``reg_p(F_P) + reg_i(F_I')``.

    The regularizers stand in for the learned conv + batch-norm blocks and
    default to the identity.
    """
    if regularize_points is not None:
        fp = regularize_points(fp)
    if regularize_images is not None:
        fi = regularize_images(fi)
    _same_shapes([fp, fi])
    return np.asarray(fp) + np.asarray(fi)


class Modality(str, enum.Enum):
    MULTIMODAL = "multimodal"
    POINTS_ONLY = "points_only"
    IMAGES_ONLY = "images_only"


_MODALITY_ORDER = (Modality.MULTIMODAL, Modality.POINTS_ONLY, Modality.IMAGES_ONLY)


def _check_simplex(probs):
    p = np.asarray(probs, dtype=float)
    if p.shape != (3,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError(f"modality probabilities must be 3 non-negative values summing to 1, got {probs}")
    return p


class ModalitySampler:
    """Seeded categorical draws over (multimodal, points-only, images-only)."""

    def __init__(self, probs=DEFAULT_MODALITY_PROBS, seed=0):
        self.probs = _check_simplex(probs)
        self._cdf = np.cumsum(self.probs)
        self._rng = np.random.default_rng(seed)

    def draw(self, n: Optional[int] = None):
        r = self._rng.random(1 if n is None else n)
        k = np.searchsorted(self._cdf, r, side="right")
        # cdf[-1] may round below 1; overflow goes to the last non-empty category
        k[k > 2] = int(np.flatnonzero(self.probs > 0)[-1])
        picks = [_MODALITY_ORDER[i] for i in k]
        return picks[0] if n is None else picks


def select_modality(probs=DEFAULT_MODALITY_PROBS, rng_seed=0, n: Optional[int] = None):
    """Draw one modality (or a list of ``n``) from a fresh seeded sampler."""
    return ModalitySampler(probs, rng_seed).draw(n)


def choose_features(modality: Modality, fm, fp, fi):
    """The voxel grid a detector would receive for ``modality``."""
    return {Modality.MULTIMODAL: fm, Modality.POINTS_ONLY: fp, Modality.IMAGES_ONLY: fi}[Modality(modality)]


@dataclass(frozen=True)
class LossInputs:
    l_cls: float
    l1_3d: float
    l1_2d: float
    l_iou3d: float
    l_iou2d: float
    mu: float = 0.0

    def __post_init__(self):
        for name in ("l_cls", "l1_3d", "l1_2d", "l_iou3d", "l_iou2d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def total_loss(x: LossInputs) -> float:
    """Detection loss with the L1 terms down-weighted by ``sqrt(2) exp(-mu)`` plus ``mu``."""
    return x.l_cls + SQRT2 * math.exp(-x.mu) * (x.l1_3d + x.l1_2d) + x.l_iou3d + x.l_iou2d + x.mu


def d_total_loss_d_mu(x: LossInputs) -> float:
    return 1.0 - SQRT2 * math.exp(-x.mu) * (x.l1_3d + x.l1_2d)


def optimal_mu(x: LossInputs) -> float:
    """Uncertainty minimizing :func:`total_loss` with the components held fixed."""
    a = x.l1_3d + x.l1_2d
    if a <= 0:
        raise ValueError("loss is unbounded below in mu when both L1 terms are zero")
    return math.log(SQRT2 * a)


# -- grid files -------------------------------------------------------------
# One JSON header line, a newline, then the values as little-endian float32 in C order.


def write_grid(path, values) -> None:
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim == 3:
        header = dict(zip("CHW", arr.shape))
    elif arr.ndim == 4:
        header = dict(zip("CXYZ", arr.shape))
    else:
        raise InvalidArgumentError(f"feature grids are 3D or 4D, got shape {arr.shape}")
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            f.write(np.ascontiguousarray(arr).tobytes())
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def read_grid(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = json.loads(f.readline())
        data = f.read()
    keys = "CHW" if "H" in header else "CXYZ"
    shape = tuple(int(header[k]) for k in keys)
    arr = np.frombuffer(data, dtype="<f4")
    if arr.size != math.prod(shape):
        raise InvalidArgumentError(f"grid file holds {arr.size} values, header says {shape}")
    return arr.reshape(shape).astype(np.float32)
