"""Seeded synthetic scenes with exact ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from ..boxes import Box3D, project_box3d_to_2d
from ..geom import CameraModel, estimate_intrinsics, look_at
from .scene import Object2D, Object3D, Scene, View


class PackingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    n_objects: int = 5
    size_range: tuple = (0.4, 1.2)
    room: tuple = (5.0, 5.0)  # x, y extent centred on the origin; objects rest on z = 0
    random_yaw: bool = True
    min_gap: float = 0.5  # BEV clearance between circumscribed circles
    n_views: int = 1
    image_size: tuple = (480, 640)
    camera_distance: float = 10.0
    camera_height: float = 1.5
    points_per_object: int = 400
    point_noise: float = 0.0
    dropout: float = 0.0
    n_classes: int = 10
    novel_classes: tuple = (7, 8, 9)
    max_retries: int = 10000

    @classmethod
    def from_dict(cls, d: dict) -> SynthSpec:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown synth options: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _place_boxes(spec: SynthSpec, rng: np.random.Generator) -> list:
    lo_s, hi_s = spec.size_range
    hx, hy = spec.room[0] / 2, spec.room[1] / 2
    boxes: list[Box3D] = []
    radii: list[float] = []
    tries = 0
    while len(boxes) < spec.n_objects:
        tries += 1
        if tries > spec.max_retries:
            raise PackingError(f"placed {len(boxes)} of {spec.n_objects} objects in {spec.max_retries} tries")
        l, w, h = rng.uniform(lo_s, hi_s, 3)
        yaw = rng.uniform(-math.pi, math.pi) if spec.random_yaw else 0.0
        r = 0.5 * math.hypot(l, w)
        if r > min(hx, hy):
            continue
        cx, cy = rng.uniform(-hx + r, hx - r), rng.uniform(-hy + r, hy - r)
        if any(math.hypot(cx - b.cx, cy - b.cy) < r + rb + spec.min_gap for b, rb in zip(boxes, radii)):
            continue
        boxes.append(Box3D(float(cx), float(cy), float(h / 2), float(l), float(w), float(h), float(yaw)))
        radii.append(r)
    return boxes


def sample_box_surface(box: Box3D, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points uniform over the six faces of ``box``."""
    if n <= 0:
        return np.zeros((0, 3))
    dims = np.array([box.l, box.w, box.h])
    face_area = np.array([dims[1] * dims[2], dims[0] * dims[2], dims[0] * dims[1]])
    # faces: axis k at -1/+1
    probs = np.repeat(face_area, 2) / (2 * face_area.sum())
    face = rng.choice(6, size=n, p=probs)
    local = rng.uniform(-0.5, 0.5, (n, 3))
    axis = face // 2
    local[np.arange(n), axis] = np.where(face % 2 == 0, -0.5, 0.5)
    local *= dims
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + box.center


def _cameras(spec: SynthSpec, rng: np.random.Generator) -> list:
    h, w = spec.image_size
    base = rng.uniform(-math.pi, math.pi)
    cams = []
    for k in range(spec.n_views):
        a = base + 2 * math.pi * k / max(spec.n_views, 1)
        eye = (spec.camera_distance * math.cos(a), spec.camera_distance * math.sin(a), spec.camera_height)
        pose = look_at(eye, (0.0, 0.0, 0.5))
        cams.append(CameraModel(estimate_intrinsics(h, w), pose, (h, w)))
    return cams


def generate_synthetic_scene(spec: SynthSpec = SynthSpec(), rng_seed=0, scene_id=None) -> Scene:
    """A room of non-overlapping labelled boxes seen by ``spec.n_views`` cameras.

    Points are sampled on box surfaces (no visibility culling), optionally
    jittered with Gaussian noise of ``point_noise`` metres and thinned by a
    random ``dropout`` fraction. Per-view 2D ground truth is the projected
    footprint of every box that projects validly into that view.
    """
    rng = np.random.default_rng(rng_seed)
    boxes = _place_boxes(spec, rng)
    classes = rng.integers(0, spec.n_classes, len(boxes))
    cams = _cameras(spec, rng)
    clouds = [sample_box_surface(b, spec.points_per_object, rng) for b in boxes]
    points = np.concatenate(clouds) if clouds else np.zeros((0, 3))
    if spec.point_noise > 0 and len(points):
        points = points + rng.normal(0.0, spec.point_noise, points.shape)
    if spec.dropout > 0 and len(points):
        points = points[rng.random(len(points)) >= spec.dropout]
    gt3d = [Object3D(int(c), b) for c, b in zip(classes, boxes)]
    gt2d = []
    for cam in cams:
        per_view = []
        for obj in gt3d:
            fp, ok = project_box3d_to_2d(obj.box3d, cam)
            if ok:
                per_view.append(Object2D(obj.class_id, fp))
        gt2d.append(per_view)
    return Scene(
        id=scene_id if scene_id is not None else f"synth-{rng_seed}",
        points=points,
        views=[View(c) for c in cams],
        gt3d=gt3d,
        gt2d=gt2d,
        vocabulary=[f"class_{k}" for k in range(spec.n_classes)],
        novel=frozenset(spec.novel_classes),
    )

