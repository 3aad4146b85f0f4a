"""Command line entry point: ``cycleprop <subcommand> ...``.

Every subcommand reads the same JSON config layout as the pipeline (see
``DEFAULT_CONFIG``); only the sections it needs are used. Failures print a
JSON error object on stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..boxes import Box2D, Detection
from ..fuse import VoxelGridSpec, build_projection_map, read_grid, resample_to_voxels, write_grid
from ..geom import camera_from_record
from ..lift import ClusterParams, Detection2D, FusionParams, PointCloud, fuse_inference, lift_detections
from ..pseudo import AgnosticPrediction, make_pseudo_labels
from .evaluate import evaluate
from .pipeline import merge_config, run_pipeline, stage_seed
from .scene import atomic_write_json, detections_from_records, detections_to_records, load_scene, read_json, save_scene
from .synth import SynthSpec, generate_synthetic_scene

EXIT_ERROR = 1
EXIT_PARTIAL = 3


def _config(args) -> dict:
    raw = read_json(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.threads is not None:
        raw["threads"] = args.threads
    return merge_config(raw)


def cmd_synth(args):
    raw = read_json(args.config) if args.config else {}
    spec = SynthSpec.from_dict(raw.get("spec", {}))
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    out_dir = Path(args.out_dir or ".")
    paths = []
    for i in range(args.count):
        scene = generate_synthetic_scene(spec, stage_seed(seed, "synth3d", i), scene_id=f"scene-{i:04d}")
        if args.two_d_only:
            scene = scene.without_3d()
        paths.append(str(save_scene(scene, out_dir / f"{scene.id}.json")))
    print(json.dumps({"scenes": paths}))


def cmd_lift(args):
    cfg = _config(args)
    scene = load_scene(args.scene)
    recs = read_json(args.dets2d)
    dets2d = [[Detection2D.from_record(r) for r in per_view] for per_view in recs]
    lc = cfg["lift"]
    res = lift_detections(
        PointCloud(scene.points), scene.cameras, dets2d,
        ClusterParams(lc["eps"], lc["min_points"], lc["keep"]), lc["yaw_mode"], lc["min_size"],
    )
    out = Path(args.out)
    atomic_write_json(out, detections_to_records(res.detections))
    atomic_write_json(out.with_suffix(".skips.json"), [s.to_record() for s in res.skipped])


def cmd_pseudo_label(args):
    cfg = _config(args)
    gt = [(int(r["class_id"]), Box2D(*map(float, r["box2d"]))) for r in read_json(args.gt2d)]
    preds = [AgnosticPrediction.from_record(r) for r in read_json(args.preds)]
    pc = cfg["pseudo"]
    res = make_pseudo_labels(gt, preds, pc["max_cost"], pc["pad_cost"])
    out = Path(args.out)
    atomic_write_json(out, [lab.to_record() for lab in res.labels])
    atomic_write_json(out.with_suffix(".unmatched.json"), res.unmatched)


def cmd_project(args):
    grid = VoxelGridSpec.from_record(read_json(args.grid))
    camera = camera_from_record(read_json(args.camera))
    feat = read_grid(args.features)
    pmap = build_projection_map(grid, camera, feat.shape[1:])
    write_grid(args.out, resample_to_voxels(feat, pmap))


def cmd_fuse(args):
    cfg = _config(args)
    model = detections_from_records(read_json(args.model))
    lifted = detections_from_records(read_json(args.lifted))
    fused = fuse_inference(model, lifted, FusionParams(**cfg["fusion"]))
    atomic_write_json(args.out, detections_to_records(fused))


def cmd_eval(args):
    cfg = _config(args)
    if len(args.dets) != len(args.scenes):
        raise ValueError(f"{len(args.dets)} detection files for {len(args.scenes)} scenes")
    scenes = [load_scene(p) for p in args.scenes]
    dets = [[Detection.from_record(r) for r in read_json(p)] for p in args.dets]
    ec = cfg["eval"]
    report = evaluate(dets, scenes, ec["iou_threshold"], ec["interpolation"], ec["iou_mode"])
    if args.out:
        atomic_write_json(args.out, report.to_record())
    print(json.dumps(report.to_record(), sort_keys=True))


def cmd_pipeline(args):
    raw = read_json(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.threads is not None:
        raw["threads"] = args.threads
    manifest = run_pipeline(raw, args.out_dir or "pipeline_out")
    if manifest["errors"]:
        json.dump({"error": "partial failure", "failures": manifest["errors"]}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_PARTIAL
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--out-dir", default=None)
    common.add_argument("--threads", type=int, default=None)

    parser = argparse.ArgumentParser(prog="cycleprop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write synthetic scenes")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--two-d-only", action="store_true", help="strip points and 3D ground truth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("lift", parents=[common], help="lift 2D detections into 3D boxes")
    p.add_argument("--scene", required=True)
    p.add_argument("--dets2d", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("pseudo-label", parents=[common], help="match 2D ground truth to class-agnostic 3D boxes")
    p.add_argument("--gt2d", required=True)
    p.add_argument("--preds", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("project", parents=[common], help="resample an image feature grid into voxels")
    p.add_argument("--grid", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("fuse", parents=[common], help="merge lifted boxes into model predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--lifted", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", parents=[common], help="AP of detections against scene ground truth")
    p.add_argument("--scenes", nargs="+", required=True)
    p.add_argument("--dets", nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", parents=[common], help="run every stage end to end")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except Exception as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc), "command": args.command}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
