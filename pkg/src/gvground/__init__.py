"""Generalized visual grounding at desk scale: instance queries seeded by
attention-selected prior points, a deformable decoder, point-guided matching
and joint box/mask outputs over synthetic scenes."""
from gvground.config import RunConfig
from gvground.encoder import GeneratorConfig, Scene, generate_scene, synth_scenes
from gvground.errors import ConfigurationError, GenerationError, InvalidArgument, NumericalError
from gvground.kernels import BACKEND
from gvground.numerics import Grid, ParamStore, TextSequence
from gvground.pipeline import build_params, forward, predict

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigurationError",
    "GenerationError",
    "GeneratorConfig",
    "Grid",
    "InvalidArgument",
    "NumericalError",
    "ParamStore",
    "RunConfig",
    "Scene",
    "TextSequence",
    "build_params",
    "forward",
    "generate_scene",
    "predict",
    "synth_scenes",
]
