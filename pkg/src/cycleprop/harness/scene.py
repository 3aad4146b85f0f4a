"""Scene records and their on-disk format.

A scene file is a JSON object; its point cloud lives next to it in a binary
blob of little-endian float32 ``xyz`` triples referenced by relative path.
All writes go to a temporary file first and are renamed into place.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..boxes import Box2D, Box3D, Detection
from ..geom import CameraModel, camera_from_record, camera_to_record


@dataclass(frozen=True)
class Object3D:
    class_id: int
    box3d: Box3D


@dataclass(frozen=True)
class Object2D:
    class_id: int
    box2d: Box2D


@dataclass(frozen=True)
class View:
    camera: CameraModel
    features: Optional[str] = None  # path of a (C, H, W) grid file, relative to the scene file


@dataclass(eq=False)
class Scene:
    id: str
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    views: list = field(default_factory=list)
    gt3d: list = field(default_factory=list)
    gt2d: list = field(default_factory=list)  # one list of Object2D per view
    vocabulary: list = field(default_factory=list)
    novel: frozenset = frozenset()

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.novel = frozenset(int(c) for c in self.novel)
        if len(self.gt2d) != len(self.views):
            raise ValueError(f"scene {self.id}: {len(self.views)} views but {len(self.gt2d)} gt2d lists")
        n = len(self.vocabulary)
        for o in list(self.gt3d) + [o for per_view in self.gt2d for o in per_view]:
            if not 0 <= o.class_id < n:
                raise ValueError(f"scene {self.id}: class id {o.class_id} outside vocabulary of {n}")

    @property
    def cameras(self) -> list:
        return [v.camera for v in self.views]

    @property
    def is_2d_only(self) -> bool:
        return len(self.points) == 0 and not self.gt3d

    def base_classes(self) -> list:
        return [c for c in range(len(self.vocabulary)) if c not in self.novel]

    def without_3d(self) -> Scene:
        """Copy with the point cloud and 3D annotations removed."""
        return Scene(self.id, np.zeros((0, 3)), list(self.views), [], [list(g) for g in self.gt2d],
                     list(self.vocabulary), self.novel)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode()


def atomic_write_json(path, obj) -> None:
    atomic_write_bytes(path, dumps(obj))


def read_json(path):
    with open(path) as f:
        return json.load(f)


def scene_to_record(scene: Scene, points_file: Optional[str]) -> dict:
    return {
        "id": scene.id,
        "points_file": points_file,
        "num_points": len(scene.points),
        "views": [
            {**camera_to_record(v.camera), **({"features": v.features} if v.features else {})} for v in scene.views
        ],
        "gt3d": [{"class_id": o.class_id, "box3d": o.box3d.as_list()} for o in scene.gt3d],
        "gt2d": [[{"class_id": o.class_id, "box2d": o.box2d.as_list()} for o in per_view] for per_view in scene.gt2d],
        "vocabulary": list(scene.vocabulary),
        "novel": sorted(scene.novel),
    }


def scene_from_record(rec: dict, points: np.ndarray) -> Scene:
    return Scene(
        id=str(rec["id"]),
        points=points,
        views=[View(camera_from_record(v), v.get("features")) for v in rec.get("views", [])],
        gt3d=[Object3D(int(o["class_id"]), Box3D.from_list(o["box3d"])) for o in rec.get("gt3d", [])],
        gt2d=[
            [Object2D(int(o["class_id"]), Box2D(*map(float, o["box2d"]))) for o in per_view]
            for per_view in rec.get("gt2d", [])
        ],
        vocabulary=list(rec.get("vocabulary", [])),
        novel=frozenset(rec.get("novel", [])),
    )


def save_scene(scene: Scene, path) -> Path:
    """Write ``<path>`` (JSON) plus ``<stem>.points.bin`` when the cloud is non-empty."""
    path = Path(path)
    points_file = None
    if len(scene.points):
        points_file = f"{path.stem}.points.bin"
        atomic_write_bytes(path.parent / points_file, scene.points.astype("<f4").tobytes())
    atomic_write_json(path, scene_to_record(scene, points_file))
    return path


def load_scene(path) -> Scene:
    path = Path(path)
    rec = read_json(path)
    points = np.zeros((0, 3))
    if rec.get("points_file"):
        raw = np.fromfile(path.parent / rec["points_file"], dtype="<f4")
        points = raw.reshape(-1, 3).astype(float)
    return scene_from_record(rec, points)


def detections_to_records(dets) -> list:
    return [d.to_record() for d in dets]


def detections_from_records(recs) -> list:
    return [Detection.from_record(r) for r in recs]
