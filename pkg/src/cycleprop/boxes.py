"""2D and 7-DoF 3D box algebra.

A :class:`Box3D` is a centre, sizes ``(l, w, h)`` and a yaw about the vertical
(z) axis. ``l`` runs along the box's local x axis, ``w`` along local y and
``h`` along z.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geom import CameraModel, project_points


class Source(str, enum.Enum):
    MODEL = "model"
    LIFTED = "lifted"
    PSEUDO = "pseudo"


def wrap_angle(a: float) -> float:
    """Map an angle into ``[-pi, pi)``."""
    if -math.pi <= a < math.pi:
        return a
    a = (a + math.pi) % (2.0 * math.pi) - math.pi
    return a if a < math.pi else -math.pi


@dataclass(frozen=True)
class Box2D:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise ValueError(f"invalid 2D box {self.as_list()}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class Box3D:
    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float = 0.0

    def __post_init__(self):
        vals = self.as_list()
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite 3D box {vals}")
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValueError(f"3D box sizes must be positive, got {vals[3:6]}")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @classmethod
    def from_list(cls, v: Sequence[float]) -> Box3D:
        return cls(*map(float, v))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    def as_list(self) -> list[float]:
        return [self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw]


@dataclass(frozen=True)
class Detection:
    box3d: Box3D
    class_id: int
    score: float
    source: Source = Source.MODEL
    box2d: Optional[Box2D] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        object.__setattr__(self, "source", Source(self.source))

    def to_record(self) -> dict:
        rec = {
            "box3d": self.box3d.as_list(),
            "class_id": int(self.class_id),
            "score": float(self.score),
            "source": self.source.value,
        }
        if self.box2d is not None:
            rec["box2d"] = self.box2d.as_list()
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> Detection:
        box2d = rec.get("box2d")
        return cls(
            box3d=Box3D.from_list(rec["box3d"]),
            class_id=int(rec["class_id"]),
            score=float(rec["score"]),
            source=Source(rec.get("source", "model")),
            box2d=Box2D(*box2d) if box2d is not None else None,
        )


# -- 2D overlap -------------------------------------------------------------


def _intersection_2d(a: Box2D, b: Box2D) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou_2d(a: Box2D, b: Box2D) -> float:
    inter = _intersection_2d(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def giou_2d(a: Box2D, b: Box2D) -> float:
    """Generalized IoU: IoU minus the share of the enclosing box not covered by the union."""
    inter = _intersection_2d(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    enclose = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    return inter / union - (enclose - union) / enclose


# -- 3D geometry ------------------------------------------------------------

# local corner signs: bottom face counter-clockwise seen from above, then top
_CORNER_SIGNS = np.array(
    [
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, 1],
        [-1, 1, 1],
        [-1, -1, 1],
        [1, -1, 1],
    ],
    dtype=float,
)


def corners_3d(b: Box3D) -> np.ndarray:
    """The 8 vertices of the box as an (8, 3) array.

    Indices 0-3 are the bottom face (``z = cz - h/2``) counter-clockwise when
    viewed from above, starting at local ``(+l/2, +w/2)``; indices 4-7 are the
    top face in the same order, so corner ``i + 4`` sits above corner ``i``.
    """
    local = _CORNER_SIGNS * (0.5 * np.array([b.l, b.w, b.h]))
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + b.center


def bev_corners(b: Box3D, origin=(0.0, 0.0)) -> np.ndarray:
    """Counter-clockwise BEV rectangle (4, 2), optionally relative to ``origin``."""
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    hl, hw = 0.5 * b.l, 0.5 * b.w
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([b.cx - origin[0], b.cy - origin[1]])


def _bev_corner_list(b: Box3D, ox: float, oy: float) -> list:
    # plain tuples: numpy overhead dominates on four vertices
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    hl, hw = 0.5 * b.l, 0.5 * b.w
    cx, cy = b.cx - ox, b.cy - oy
    return [(cx + c * x - s * y, cy + s * x + c * y) for x, y in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))]


def polygon_area(poly) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    n = len(poly)
    if n < 3:
        return 0.0
    total = 0.0
    px, py = poly[-1]
    for x, y in poly:
        total += px * y - py * x
        px, py = x, y
    return 0.5 * float(total)


def clip_convex_polygon(subject, clip) -> list:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clip``."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for k in range(n):
        if not output:
            break
        ax, ay = clip[k]
        bx, by = clip[(k + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp = output
        output = []
        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    t = s_prev / (s_prev - s_cur)
                    output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                output.append(cur)
            elif s_prev >= 0:
                t = s_prev / (s_prev - s_cur)
                output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, s_prev = cur, s_cur
    return output


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    # work relative to a's centre; keeps the clip well conditioned far from the origin
    reach = math.hypot(a.l, a.w) / 2 + math.hypot(b.l, b.w) / 2
    if math.hypot(b.cx - a.cx, b.cy - a.cy) >= reach:
        return 0.0
    pa = _bev_corner_list(a, a.cx, a.cy)
    pb = _bev_corner_list(b, a.cx, a.cy)
    poly = clip_convex_polygon(pb, pa)
    return max(polygon_area(poly), 0.0)


def _aligned_overlap(a: Box3D, b: Box3D) -> tuple[float, float]:
    """(BEV overlap area, z overlap) treating both boxes as axis-aligned."""
    ox = min(a.cx + a.l / 2, b.cx + b.l / 2) - max(a.cx - a.l / 2, b.cx - b.l / 2)
    oy = min(a.cy + a.w / 2, b.cy + b.w / 2) - max(a.cy - a.w / 2, b.cy - b.w / 2)
    oz = min(a.cz + a.h / 2, b.cz + b.h / 2) - max(a.cz - a.h / 2, b.cz - b.h / 2)
    return max(ox, 0.0) * max(oy, 0.0), max(oz, 0.0)


def _z_overlap(a: Box3D, b: Box3D) -> float:
    oz = min(a.cz + a.h / 2, b.cz + b.h / 2) - max(a.cz - a.h / 2, b.cz - b.h / 2)
    return max(oz, 0.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Exact IoU of two yaw-rotated boxes (BEV polygon clip times z overlap)."""
    oz = _z_overlap(a, b)
    if oz <= 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * oz
    union = a.volume + b.volume - inter
    return min(max(inter / union, 0.0), 1.0)


def iou_3d_axis_aligned(a: Box3D, b: Box3D) -> float:
    """Closed-form IoU that ignores yaw (``l`` along x, ``w`` along y)."""
    area, oz = _aligned_overlap(a, b)
    inter = area * oz
    if inter <= 0.0:
        return 0.0
    return inter / (a.volume + b.volume - inter)


IOU_3D_MODES = {"rotated": iou_3d, "aligned": iou_3d_axis_aligned}


def project_box3d_to_2d(b: Box3D, camera: CameraModel) -> tuple[Optional[Box2D], bool]:
    """2D footprint of a 3D box: the bounding rectangle of its projected corners.

    The rectangle is clipped to the image extent. Returns ``(None, False)``
    when any corner is at or behind the image plane, or when the footprint
    falls completely outside the image.
    """
    uvd, valid = project_points(corners_3d(b), camera)
    if not valid.all():
        return None, False
    h, w = camera.image_size
    x1 = max(float(uvd[:, 0].min()), -0.5)
    y1 = max(float(uvd[:, 1].min()), -0.5)
    x2 = min(float(uvd[:, 0].max()), w - 0.5)
    y2 = min(float(uvd[:, 1].max()), h - 0.5)
    if x1 >= x2 or y1 >= y2:
        return None, False
    return Box2D(x1, y1, x2, y2), True


# -- suppression ------------------------------------------------------------


def nms_3d(dets: Sequence[Detection], iou_threshold: float, per_class: bool = False, iou_fn=iou_3d) -> list:
    """Greedy non-maximum suppression over 3D boxes.

    Detections are visited by descending score (lower input index first on
    ties); one is dropped when its IoU with an already kept detection exceeds
    ``iou_threshold``. With ``per_class`` only same-class pairs suppress.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(
            (per_class and k.class_id != d.class_id) or iou_fn(k.box3d, d.box3d) <= iou_threshold
            for k in kept
        ):
            kept.append(d)
    return kept
