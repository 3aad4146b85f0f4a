"""
The whole loop on synthetic data
================================

Synthesize 3D scenes and 2D-only images, lift, pseudo-label, fuse and
evaluate. The same run is available as ``cycleprop pipeline``.
"""

import json
import tempfile
from pathlib import Path

from cycleprop.harness import run_pipeline

with tempfile.TemporaryDirectory() as tmp:
    manifest = run_pipeline({"seed": 1, "synth": {"n_scenes_3d": 4, "n_scenes_2d": 4}}, tmp)
    print("files:", sorted(str(p.relative_to(tmp)) for p in Path(tmp).rglob("*.json"))[:6], "...")
    print("pseudo-labels:", manifest["pseudo_labels"])
    ev = manifest["eval"]
    print(json.dumps({k: ev[k] for k in ("ap_all", "ap_base", "ap_novel", "recall")}, indent=1))
    print("errors:", manifest["errors"])
