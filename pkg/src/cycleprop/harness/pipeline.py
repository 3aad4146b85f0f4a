"""End-to-end run of the non-neural propagation stages.

Stages, per run:

1. Load (or synthesize) 3D scenes, which carry points and 3D ground truth,
   and 2D-only scenes, which carry 2D ground truth only.
2. 2D -> 3D: lift 2D detections of every 3D scene into 3D boxes.
3. 3D -> 2D: pair class-agnostic 3D predictions with 2D ground truth of every
   2D-only scene to produce pseudo-labels.
4. Fuse lifted boxes with model predictions and evaluate on the 3D scenes.

The trained networks are replaced by seeded simulators (or by prediction
files) so every stage can be checked against exact synthetic ground truth.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from .. import __version__
from ..boxes import Detection, Source
from ..fuse import ModalitySampler
from ..geom import CameraModel, decode_extrinsics, encode_extrinsics, estimate_intrinsics
from ..lift import ClusterParams, Detection2D, FusionParams, PointCloud, fuse_inference, lift_detections
from ..pseudo import AgnosticPrediction, NoiseSpec, make_pseudo_labels, perturb_box, simulate_agnostic_predictions
from .evaluate import evaluate
from .scene import Scene, atomic_write_json, detections_to_records, load_scene, read_json, save_scene
from .synth import SynthSpec, generate_synthetic_scene

log = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    "seed": 0,
    "threads": 1,
    "scenes_3d": None,  # list of scene files; synthesized when null
    "scenes_2d": None,
    "dets2d_files": None,  # per 3D scene, 2D detector output; simulated from gt2d when null
    "model_dets_files": None,  # per 3D scene, model predictions; simulated when null
    "agnostic_pred_files": None,  # per 2D scene, class-agnostic predictions; simulated when null
    "synth": {"n_scenes_3d": 4, "n_scenes_2d": 4, "spec": {}},
    "detector2d": {"score_range": [0.3, 1.0], "threshold": 0.4},
    "model": {"noise": {"center_sigma": 0.05, "size_sigma": 0.05, "yaw_sigma": 0.05}, "score_range": [0.5, 1.0]},
    "agnostic": {"noise": {"center_sigma": 0.05, "size_sigma": 0.05, "yaw_sigma": 0.05, "drop_prob": 0.1, "spurious_rate": 0.2}},
    "lift": {"eps": 0.3, "min_points": 5, "keep": "largest", "yaw_mode": "bev_min_area", "min_size": 0.02},
    "fusion": {"score_divisor": 2.0, "confidence_threshold": 0.4, "nms_iou": 0.25},
    "pseudo": {"max_cost": 0.75, "pad_cost": 10.0},
    "modality": {"probs": [0.5, 0.25, 0.25]},
    "eval": {"iou_threshold": 0.25, "interpolation": "continuous", "iou_mode": "rotated"},
}

_STAGE_CODES = {"synth3d": 1, "synth2d": 2, "det2d": 3, "model": 4, "agnostic": 5, "modality": 6}


class ConfigError(ValueError):
    pass


def merge_config(overrides: Optional[dict], base: dict = DEFAULT_CONFIG, path: str = "") -> dict:
    """Deep-merge ``overrides`` into a copy of ``base``; unknown keys are errors."""
    out = copy.deepcopy(base)
    for k, v in (overrides or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k not in ("spec", "noise"):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path + k!r} must be a mapping")
            out[k] = merge_config(v, base[k], f"{path}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def stage_seed(seed: int, kind: str, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), _STAGE_CODES[kind], int(index)])


@dataclass
class SceneOutcome:
    scene_id: str
    detections: list = field(default_factory=list)
    lifted: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    modality: Optional[str] = None
    pseudo: list = field(default_factory=list)  # per view: list of PseudoLabel
    unmatched: list = field(default_factory=list)  # per view
    pseudo_correct: Optional[int] = None
    error: Optional[dict] = None


def simulate_2d_detections(scene: Scene, score_range, threshold, seed) -> list:
    """Ground-truth 2D boxes with random detector scores, filtered at ``threshold``."""
    rng = np.random.default_rng(seed)
    out = []
    for per_view in scene.gt2d:
        scores = rng.uniform(score_range[0], score_range[1], len(per_view))
        out.append([Detection2D(o.box2d, o.class_id, float(s)) for o, s in zip(per_view, scores) if s >= threshold])
    return out


def simulate_model_detections(scene: Scene, noise: NoiseSpec, score_range, seed) -> list:
    """A closed-vocabulary detector: noisy boxes for base-class objects only."""
    rng = np.random.default_rng(seed)
    dets = []
    for obj in scene.gt3d:
        box = perturb_box(obj.box3d, noise, rng)
        score = float(rng.uniform(score_range[0], score_range[1]))
        if obj.class_id not in scene.novel:
            dets.append(Detection(box, obj.class_id, score, Source.MODEL))
    return dets


def _load_list(paths, loader):
    return [loader(p) for p in paths]


def _process_3d(i: int, scene: Scene, cfg: dict, dets2d_files, model_files) -> SceneOutcome:
    out = SceneOutcome(scene.id)
    stage = "lift"
    try:
        seed = cfg["seed"]
        if dets2d_files:
            recs = read_json(dets2d_files[i])
            dets2d = [[Detection2D.from_record(r) for r in per_view] for per_view in recs]
        else:
            d2 = cfg["detector2d"]
            dets2d = simulate_2d_detections(scene, d2["score_range"], d2["threshold"], stage_seed(seed, "det2d", i))
        lc = cfg["lift"]
        res = lift_detections(
            PointCloud(scene.points),
            scene.cameras,
            dets2d,
            ClusterParams(lc["eps"], lc["min_points"], lc["keep"]),
            lc["yaw_mode"],
            lc["min_size"],
        )
        out.lifted, out.skipped = res.detections, res.skipped
        stage = "fuse"
        if model_files:
            model = [Detection.from_record(r) for r in read_json(model_files[i])]
        else:
            mc = cfg["model"]
            model = simulate_model_detections(
                scene, NoiseSpec(**mc["noise"]), mc["score_range"], stage_seed(seed, "model", i)
            )
        out.detections = fuse_inference(model, out.lifted, FusionParams(**cfg["fusion"]))
        stage = "modality"
        out.modality = ModalitySampler(cfg["modality"]["probs"], stage_seed(seed, "modality", i)).draw().value
    except Exception as exc:  # reported per scene; the run continues
        out.error = {"scene_id": scene.id, "stage": stage, "error": f"{type(exc).__name__}: {exc}"}
    return out


def estimated_camera(camera: CameraModel) -> CameraModel:
    """Camera a 2D-only image would get: intrinsics from its size, pose from a decoded extrinsic code."""
    h, w = camera.image_size
    return CameraModel(estimate_intrinsics(h, w), decode_extrinsics(encode_extrinsics(camera.pose)), (h, w))


def _process_2d(i: int, scene: Scene, hidden: Optional[Scene], cfg: dict, pred_files) -> SceneOutcome:
    out = SceneOutcome(scene.id)
    stage = "agnostic"
    try:
        if pred_files:
            recs = read_json(pred_files[i])
            preds_per_view = [[AgnosticPrediction.from_record(r) for r in per_view] for per_view in recs]
        else:
            if hidden is None:
                raise ValueError("no agnostic predictions file and no hidden 3D truth to simulate from")
            noise = NoiseSpec(**cfg["agnostic"]["noise"])
            boxes = [o.box3d for o in hidden.gt3d]
            seeds = stage_seed(cfg["seed"], "agnostic", i).spawn(len(scene.views))
            preds_per_view = [
                simulate_agnostic_predictions(boxes, estimated_camera(v.camera), noise, s)
                for v, s in zip(scene.views, seeds)
            ]
        stage = "pseudo-label"
        pc = cfg["pseudo"]
        correct = 0
        for k, per_view in enumerate(scene.gt2d):
            gt = [(o.class_id, o.box2d) for o in per_view]
            res = make_pseudo_labels(gt, preds_per_view[k], pc["max_cost"], pc["pad_cost"])
            out.pseudo.append(res.labels)
            out.unmatched.append(res.unmatched)
            if hidden is not None:
                classes = [o.class_id for o in hidden.gt3d]
                for lab in res.labels:
                    origin = preds_per_view[k][lab.pred_index].origin
                    correct += int(origin is not None and classes[origin] == lab.class_id)
        out.pseudo_correct = correct if hidden is not None else None
    except Exception as exc:
        out.error = {"scene_id": scene.id, "stage": stage, "error": f"{type(exc).__name__}: {exc}"}
    return out


def _versions() -> dict:
    return {"cycleprop": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def run_pipeline(config: Optional[dict], out_dir) -> dict:
    """Run every stage and write artifacts under ``out_dir``.

    Writes ``scenes/`` (synthesized inputs), ``lifted/``, ``detections/``,
    ``pseudo_labels/``, ``eval_report.json`` (when 3D scenes exist) and
    ``manifest.json``. Returns the manifest.
    """
    cfg = merge_config(config)
    out_dir = Path(out_dir)
    seed = int(cfg["seed"])
    notices = []

    hidden_2d: list = []
    if cfg["scenes_3d"] is not None or cfg["scenes_2d"] is not None:
        scenes_3d = _load_list(cfg["scenes_3d"] or [], load_scene)
        scenes_2d = _load_list(cfg["scenes_2d"] or [], load_scene)
        hidden_2d = [None] * len(scenes_2d)
    else:
        sc = cfg["synth"]
        spec = SynthSpec.from_dict(sc["spec"])
        scenes_3d = [
            generate_synthetic_scene(spec, stage_seed(seed, "synth3d", i), scene_id=f"scene3d-{i:04d}")
            for i in range(sc["n_scenes_3d"])
        ]
        hidden_2d = [
            generate_synthetic_scene(spec, stage_seed(seed, "synth2d", i), scene_id=f"image2d-{i:04d}")
            for i in range(sc["n_scenes_2d"])
        ]
        scenes_2d = [s.without_3d() for s in hidden_2d]
        for s in scenes_3d + scenes_2d:
            save_scene(s, out_dir / "scenes" / f"{s.id}.json")

    threads = max(1, int(cfg["threads"]))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        res3d = list(pool.map(lambda t: _process_3d(t[0], t[1], cfg, cfg["dets2d_files"], cfg["model_dets_files"]), enumerate(scenes_3d)))
        res2d = list(
            pool.map(lambda t: _process_2d(t[0], t[1], hidden_2d[t[0]], cfg, cfg["agnostic_pred_files"]), enumerate(scenes_2d))
        )

    errors = [r.error for r in res3d + res2d if r.error]
    for r in res3d:
        if r.error:
            continue
        atomic_write_json(out_dir / "lifted" / f"{r.scene_id}.json", detections_to_records(r.lifted))
        atomic_write_json(out_dir / "lifted" / f"{r.scene_id}.skips.json", [s.to_record() for s in r.skipped])
        atomic_write_json(out_dir / "detections" / f"{r.scene_id}.json", detections_to_records(r.detections))
    pseudo_summary = {"labels": 0, "unmatched": 0, "correct": None}
    correct_known = all(r.pseudo_correct is not None for r in res2d if not r.error) and any(not r.error for r in res2d)
    if correct_known:
        pseudo_summary["correct"] = 0
    for r in res2d:
        if r.error:
            continue
        atomic_write_json(
            out_dir / "pseudo_labels" / f"{r.scene_id}.json",
            {"views": [[lab.to_record() for lab in v] for v in r.pseudo], "unmatched": r.unmatched},
        )
        pseudo_summary["labels"] += sum(len(v) for v in r.pseudo)
        pseudo_summary["unmatched"] += sum(len(v) for v in r.unmatched)
        if correct_known:
            pseudo_summary["correct"] += r.pseudo_correct
    if not scenes_2d:
        notices.append("no 2D-only scenes: pseudo-labelling skipped")

    ok3d = [(s, r) for s, r in zip(scenes_3d, res3d) if not r.error]
    report = None
    if ok3d:
        ec = cfg["eval"]
        report = evaluate([r.detections for _, r in ok3d], [s for s, _ in ok3d], ec["iou_threshold"], ec["interpolation"], ec["iou_mode"])
        atomic_write_json(out_dir / "eval_report.json", report.to_record())
    else:
        notices.append("no 3D scenes: evaluation skipped")

    manifest = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "versions": _versions(),
        "scenes_3d": [s.id for s in scenes_3d],
        "scenes_2d": [s.id for s in scenes_2d],
        "modalities": {r.scene_id: r.modality for r in res3d if not r.error},
        "pseudo_labels": pseudo_summary,
        "errors": errors,
        "notices": notices,
        "eval": report.to_record() if report else None,
    }
    atomic_write_json(out_dir / "manifest.json", manifest)
    for e in errors:
        log.warning("scene %s failed in stage %s: %s", e["scene_id"], e["stage"], e["error"])
    return manifest
