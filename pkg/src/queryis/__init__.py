"""Query-based 3D instance segmentation on synthetic point clouds, in plain numpy."""

from .config import RunConfig
from .engine import Checkpoint, infer, load_checkpoint, save_checkpoint, train
from .evaluation import EvalReport, evaluate
from .scene import GroundTruth, Scene, generate_scene, read_scene, write_scene

__all__ = [
    "Checkpoint",
    "EvalReport",
    "GroundTruth",
    "RunConfig",
    "Scene",
    "evaluate",
    "generate_scene",
    "infer",
    "load_checkpoint",
    "read_scene",
    "save_checkpoint",
    "train",
    "write_scene",
]

__version__ = "0.1.0"
