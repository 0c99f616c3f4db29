"""Lightweight bidirectional recurrent grouping-attention network for 4x
video super-resolution: model, BD degradation tools, training engine, and
Y-channel evaluation toolkit."""

from .config import (
    AblationSpec,
    DegradationConfig,
    ModelConfig,
    Settings,
    TrainConfig,
    ablation_grid,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    RgvsrError,
    TrainingDiverged,
)
from .net import RecurrentGroupingNet, build_model, count_params, super_resolve

__version__ = "0.1.0"

__all__ = [
    "AblationSpec",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DegradationConfig",
    "ModelConfig",
    "RecurrentGroupingNet",
    "RgvsrError",
    "Settings",
    "TrainConfig",
    "TrainingDiverged",
    "ablation_grid",
    "build_model",
    "count_params",
    "super_resolve",
    "__version__",
]
