"""Context-aware human and object motion prediction on a small numpy autodiff core."""

__version__ = "0.1.0"

from .autodiff import ContractError, DimensionError, NumericError, Tensor
from .checkpoint import load, save
from .data import BoundingBox, SceneSequence, Vocabulary, read_scene, write_scene
from .evaluation import HorizonTable, horizon_errors
from .model import ModelConfig, forward, init_params, zero_velocity_baseline
from .synthetic import ScenarioSpec, generate
from .training import train

__all__ = [
    "BoundingBox", "ContractError", "DimensionError", "HorizonTable", "ModelConfig", "NumericError",
    "ScenarioSpec", "SceneSequence", "Tensor", "Vocabulary", "forward", "generate", "horizon_errors",
    "init_params", "load", "read_scene", "save", "train", "write_scene", "zero_velocity_baseline",
]
