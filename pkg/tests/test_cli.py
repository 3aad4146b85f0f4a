import json
import subprocess
import sys

import numpy as np
import pytest

from cycleprop.boxes import Detection
from cycleprop.fuse import VoxelGridSpec, read_grid, write_grid
from cycleprop.geom import CameraModel, Intrinsics, Pose, camera_to_record
from cycleprop.harness.cli import EXIT_ERROR, EXIT_PARTIAL, main
from cycleprop.harness.scene import load_scene


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def scenes(tmp_path, capsys):
    assert main(["synth", "--count", "2", "--seed", "3", "--out-dir", str(tmp_path / "sc")]) == 0
    return json.loads(capsys.readouterr().out)["scenes"]


def test_synth_writes_scenes(scenes, tmp_path):
    assert len(scenes) == 2
    s = load_scene(scenes[0])
    assert len(s.gt3d) == 5 and len(s.points) == 2000
    assert (tmp_path / "sc" / "scene-0000.points.bin").exists()


def test_synth_two_d_only(tmp_path, capsys):
    assert main(["synth", "--two-d-only", "--out-dir", str(tmp_path)]) == 0
    path = json.loads(capsys.readouterr().out)["scenes"][0]
    assert load_scene(path).is_2d_only


def test_synth_config_spec(tmp_path, capsys):
    cfg = _write(tmp_path / "c.json", {"spec": {"n_objects": 2, "points_per_object": 10}})
    assert main(["synth", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    scene = load_scene(json.loads(capsys.readouterr().out)["scenes"][0])
    assert len(scene.gt3d) == 2 and len(scene.points) == 20


def test_lift_and_fuse_and_eval(scenes, tmp_path, capsys):
    scene = load_scene(scenes[0])
    dets2d = _write(
        tmp_path / "d2.json",
        [[{"box2d": o.box2d.as_list(), "class_id": o.class_id, "score": 0.9} for o in v] for v in scene.gt2d],
    )
    out = tmp_path / "lifted.json"
    assert main(["lift", "--scene", scenes[0], "--dets2d", dets2d, "--out", str(out)]) == 0
    lifted = json.loads(out.read_text())
    assert len(lifted) == len(scene.gt2d[0]) and all(d["source"] == "lifted" for d in lifted)
    assert json.loads(out.with_suffix(".skips.json").read_text()) == []

    model = _write(tmp_path / "m.json", [Detection(o.box3d, o.class_id, 0.95).to_record() for o in scene.gt3d[:2]])
    fused = tmp_path / "fused.json"
    assert main(["fuse", "--model", model, "--lifted", str(out), "--out", str(fused)]) == 0
    recs = json.loads(fused.read_text())
    # model copies suppress their lifted twins; remaining lifted boxes sit at 0.45
    assert sorted(r["score"] for r in recs) == sorted([0.95, 0.95] + [0.45] * (len(lifted) - 2))

    capsys.readouterr()
    rep = tmp_path / "rep.json"
    assert main(["eval", "--scenes", scenes[0], "--dets", str(fused), "--out", str(rep)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == json.loads(rep.read_text())
    assert printed["recall"] == 1.0


def test_pseudo_label(tmp_path):
    gt = _write(tmp_path / "gt.json", [{"class_id": 3, "box2d": [0, 0, 10, 10]}, {"class_id": 1, "box2d": [50, 50, 60, 60]}])
    preds = _write(
        tmp_path / "p.json",
        [{"box3d": [0, 0, 5, 1, 1, 1, 0], "box2d": [1, 0, 10, 10], "score": 0.7}],
    )
    out = tmp_path / "labels.json"
    assert main(["pseudo-label", "--gt2d", gt, "--preds", preds, "--out", str(out)]) == 0
    labels = json.loads(out.read_text())
    assert len(labels) == 1 and labels[0]["class_id"] == 3 and labels[0]["branch"] == "noisy"
    assert labels[0]["box3d"] == [0, 0, 5, 1, 1, 1, 0] and labels[0]["box2d"] == [0, 0, 10, 10]
    assert json.loads(out.with_suffix(".unmatched.json").read_text()) == [1]


def test_project(tmp_path):
    cam = CameraModel(Intrinsics(48.0, 48.0, 32.0, 24.0), Pose.identity(), (48, 64))
    camera = _write(tmp_path / "cam.json", camera_to_record(cam))
    grid = _write(tmp_path / "grid.json", VoxelGridSpec([-1, -1, 2], [0.25, 0.25, 0.5], (8, 8, 4)).to_record())
    feat = np.broadcast_to(np.arange(64, dtype=np.float32), (2, 48, 64))
    write_grid(tmp_path / "f.bin", feat)
    out = tmp_path / "vox.bin"
    assert main(["project", "--grid", grid, "--camera", camera, "--features", str(tmp_path / "f.bin"), "--out", str(out)]) == 0
    vox = read_grid(out)
    assert vox.shape == (2, 8, 8, 4) and np.any(vox > 0)


def test_pipeline_command(tmp_path):
    cfg = _write(tmp_path / "c.json", {"synth": {"n_scenes_3d": 1, "n_scenes_2d": 1}})
    assert main(["pipeline", "--config", cfg, "--seed", "2", "--threads", "2", "--out-dir", str(tmp_path / "run")]) == 0
    m = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert m["seed"] == 2 and m["config"]["threads"] == 2


def test_pipeline_partial_failure_exit_code(tmp_path, scenes, capsys):
    cfg = _write(tmp_path / "c.json", {"scenes_3d": scenes, "dets2d_files": [str(tmp_path / "nope.json")] * 2})
    assert main(["pipeline", "--config", cfg, "--out-dir", str(tmp_path / "run")]) == EXIT_PARTIAL
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "partial failure" and len(err["failures"]) == 2


def test_errors_are_machine_readable(tmp_path, capsys):
    cfg = _write(tmp_path / "c.json", {"no_such_key": 1})
    assert main(["fuse", "--config", cfg, "--model", "x", "--lifted", "y", "--out", "z"]) == EXIT_ERROR
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and err["command"] == "fuse"
    assert main(["lift", "--scene", str(tmp_path / "missing.json"), "--dets2d", "x", "--out", "y"]) == EXIT_ERROR
    assert json.loads(capsys.readouterr().err)["error"] == "FileNotFoundError"


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "cycleprop.harness.cli", "synth", "--out-dir", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0 and json.loads(proc.stdout)["scenes"]
    proc = subprocess.run([sys.executable, "-m", "cycleprop.harness.cli", "bogus"], capture_output=True, check=False)
    assert proc.returncode != 0
