"""Scene I/O, synthetic scenes, evaluation and the end-to-end pipeline."""

from .evaluate import EvalReport, Interpolation, average_precision, evaluate
from .pipeline import DEFAULT_CONFIG, run_pipeline
from .scene import Object2D, Object3D, Scene, View, load_scene, save_scene
from .synth import PackingError, SynthSpec, generate_synthetic_scene
