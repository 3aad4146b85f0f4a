"""Lifting 2D detections into 3D boxes through a point cloud.

Each 2D box selects the points projecting inside it, density clustering
discards background and outliers, and a box is fitted to the surviving
cluster. Lifted boxes can then be merged with model predictions via
:func:`fuse_inference`.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .boxes import Box2D, Box3D, Detection, Source, nms_3d
from .geom import CameraModel, project_points

MIN_BOX_SIZE = 0.02
INDOOR_EPS = 0.3
OUTDOOR_EPS = 0.7


class TooFewPointsError(ValueError):
    pass


class Keep(str, enum.Enum):
    LARGEST = "largest"
    NEAREST = "nearest"


class YawMode(str, enum.Enum):
    ZERO = "zero"
    BEV_MIN_AREA = "bev_min_area"


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.valid is not None:
            object.__setattr__(self, "valid", np.asarray(self.valid, dtype=bool).reshape(len(pts)))

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class ClusterParams:
    eps: float = INDOOR_EPS
    min_points: int = 5
    keep: Keep = Keep.LARGEST

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.min_points < 1:
            raise ValueError("min_points must be at least 1")
        object.__setattr__(self, "keep", Keep(self.keep))


@dataclass(frozen=True)
class FusionParams:
    score_divisor: float = 2.0
    confidence_threshold: float = 0.4
    nms_iou: float = 0.25

    def __post_init__(self):
        if not self.score_divisor > 1:
            raise ValueError("score_divisor must exceed 1")
        for name in ("confidence_threshold", "nms_iou"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class Detection2D:
    """Output record of an external 2D open-vocabulary detector."""

    box2d: Box2D
    class_id: int
    score: float

    def to_record(self) -> dict:
        return {"box2d": self.box2d.as_list(), "class_id": int(self.class_id), "score": float(self.score)}

    @classmethod
    def from_record(cls, rec: dict) -> Detection2D:
        return cls(Box2D(*map(float, rec["box2d"])), int(rec["class_id"]), float(rec["score"]))


@dataclass(frozen=True)
class Skip:
    view: int
    index: int
    reason: str

    def to_record(self) -> dict:
        return {"view": self.view, "index": self.index, "reason": self.reason}


@dataclass
class LiftResult:
    detections: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def points_in_box2d(cloud: PointCloud, box: Box2D, camera: CameraModel) -> np.ndarray:
    """Indices of points whose projection is valid and inside the closed box."""
    uvd, valid = project_points(cloud.points, camera)
    if cloud.valid is not None:
        valid &= cloud.valid
    u, v = uvd[:, 0], uvd[:, 1]
    with np.errstate(invalid="ignore"):
        inside = valid & (u >= box.x1) & (u <= box.x2) & (v >= box.y1) & (v <= box.y2)
    return np.flatnonzero(inside)


def dbscan_labels(points, eps: float, min_points: int) -> np.ndarray:
    """DBSCAN cluster labels, ``-1`` for noise.

    A point is core when its closed ``eps``-ball holds at least ``min_points``
    points, itself included. Clusters are grown from core points in index
    order, so labels and border assignments are deterministic.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    neighbors = cKDTree(pts).query_ball_point(pts, r=eps)
    core = np.array([len(nb) >= min_points for nb in neighbors])
    label = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != -1:
            continue
        labels[seed] = label
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            for q in sorted(neighbors[p]):
                if labels[q] == -1:
                    labels[q] = label
                    if core[q]:
                        queue.append(q)
        label += 1
    return labels


def cluster_points(points, params: ClusterParams, reference=None) -> np.ndarray:
    """Indices of the retained density cluster.

    With ``keep="largest"`` ties go to the cluster whose centroid is nearest
    to ``reference`` (world origin by default); ``keep="nearest"`` picks by
    that distance outright. Returns an empty array when no cluster forms.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    labels = dbscan_labels(pts, params.eps, params.min_points)
    n_clusters = labels.max() + 1 if len(labels) else 0
    if n_clusters == 0:
        return np.empty(0, dtype=int)
    ref = np.zeros(3) if reference is None else np.asarray(reference, dtype=float)
    best, best_key = None, None
    for k in range(n_clusters):
        members = np.flatnonzero(labels == k)
        dist = float(np.linalg.norm(pts[members].mean(axis=0) - ref))
        key = (dist,) if params.keep is Keep.NEAREST else (-len(members), dist)
        if best_key is None or key < best_key:
            best, best_key = members, key
    return best


def _convex_hull_2d(xy: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; CCW hull without collinear points."""
    pts = sorted(set(map(tuple, xy)))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def min_area_rectangle(xy) -> tuple[np.ndarray, float, float, float]:
    """Minimum-area enclosing rectangle of BEV points by rotating calipers.

    Returns ``(center_xy, length, width, yaw)`` with ``length >= width`` and
    ``yaw`` in ``[-pi/2, pi/2)`` giving the direction of the length side.
    """
    hull = _convex_hull_2d(np.asarray(xy, dtype=float))
    if len(hull) < 3:
        raise TooFewPointsError("BEV points are collinear; cannot fit a rotated rectangle")
    best = None
    for i in range(len(hull)):
        edge = hull[(i + 1) % len(hull)] - hull[i]
        ang = math.atan2(edge[1], edge[0]) % (math.pi / 2)
        c, s = math.cos(ang), math.sin(ang)
        # coordinates along (c, s) and (-s, c)
        a = hull @ np.array([c, s])
        b = hull @ np.array([-s, c])
        area = (a.max() - a.min()) * (b.max() - b.min())
        if best is None or area < best[0] - 1e-12 or (abs(area - best[0]) <= 1e-12 and ang < best[1]):
            best = (area, ang, a.min(), a.max(), b.min(), b.max())
    _, ang, a0, a1, b0, b1 = best
    c, s = math.cos(ang), math.sin(ang)
    ma, mb = 0.5 * (a0 + a1), 0.5 * (b0 + b1)
    center = np.array([ma * c - mb * s, ma * s + mb * c])
    ext_a, ext_b = a1 - a0, b1 - b0
    if ext_a >= ext_b:
        return center, ext_a, ext_b, ang
    return center, ext_b, ext_a, ang + math.pi / 2 - math.pi


def fit_box3d(points, yaw_mode=YawMode.ZERO, min_size: float = MIN_BOX_SIZE) -> Box3D:
    """Fit a 3D box to clustered points.

    ``zero`` gives the axis-aligned min/max box; ``bev_min_area`` the
    minimum-area rotated BEV rectangle times the z range. Every size is then
    floored at ``min_size``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    yaw_mode = YawMode(yaw_mode)
    need = 1 if yaw_mode is YawMode.ZERO else 3
    if len(pts) < need:
        raise TooFewPointsError(f"{yaw_mode.value} fit needs at least {need} points, got {len(pts)}")
    z0, z1 = pts[:, 2].min(), pts[:, 2].max()
    if yaw_mode is YawMode.ZERO:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        center = 0.5 * (lo + hi)
        l, w, yaw = hi[0] - lo[0], hi[1] - lo[1], 0.0
        cxy = center[:2]
    else:
        cxy, l, w, yaw = min_area_rectangle(pts[:, :2])
    h = z1 - z0
    l, w, h = max(l, min_size), max(w, min_size), max(h, min_size)
    if not (l > 0 and w > 0 and h > 0):
        raise TooFewPointsError("points span a zero-volume box and no size floor is set")
    return Box3D(float(cxy[0]), float(cxy[1]), float(0.5 * (z0 + z1)), float(l), float(w), float(h), float(yaw))


def lift_detections(
    cloud: PointCloud,
    cameras: Sequence[CameraModel],
    dets2d: Sequence[Sequence[Detection2D]],
    cluster: ClusterParams = ClusterParams(),
    yaw_mode=YawMode.ZERO,
    min_size: float = MIN_BOX_SIZE,
) -> LiftResult:
    """Lift every view's 2D detections into 3D boxes.

    Views are processed independently and their outputs concatenated in view
    order; duplicates across views are left for :func:`fuse_inference` to
    suppress. A 2D box that yields no 3D box is recorded in
    ``LiftResult.skipped`` with reason ``empty`` (no points in its frustum),
    ``no_cluster`` or ``fit_failed``.
    """
    if len(cameras) != len(dets2d):
        raise ValueError(f"{len(cameras)} cameras but {len(dets2d)} detection lists")
    out = LiftResult()
    for view, (camera, dets) in enumerate(zip(cameras, dets2d)):
        ref = camera.pose.camera_center
        for i, det in enumerate(dets):
            idx = points_in_box2d(cloud, det.box2d, camera)
            if len(idx) == 0:
                out.skipped.append(Skip(view, i, "empty"))
                continue
            pts = cloud.points[idx]
            keep = cluster_points(pts, cluster, reference=ref)
            if len(keep) == 0:
                out.skipped.append(Skip(view, i, "no_cluster"))
                continue
            try:
                box = fit_box3d(pts[keep], yaw_mode, min_size)
            except TooFewPointsError:
                out.skipped.append(Skip(view, i, "fit_failed"))
                continue
            out.detections.append(
                Detection(box3d=box, class_id=det.class_id, score=det.score, source=Source.LIFTED, box2d=det.box2d)
            )
    return out


def fuse_inference(model_dets: Sequence[Detection], lifted_dets: Sequence[Detection], params: FusionParams = FusionParams()) -> list:
    """Merge lifted boxes into model predictions.

    Lifted scores are divided by ``params.score_divisor``, the pools are
    concatenated (model first), per-class 3D NMS runs, and detections below
    ``params.confidence_threshold`` are dropped last.
    """
    rescored = [
        Detection(d.box3d, d.class_id, d.score / params.score_divisor, Source.LIFTED, d.box2d) for d in lifted_dets
    ]
    pool = list(model_dets) + rescored
    kept = nms_3d(pool, params.nms_iou, per_class=True)
    return [d for d in kept if d.score >= params.confidence_threshold]
