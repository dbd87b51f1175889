"""Hierarchical visual prompts for continual video instance segmentation, at desk scale."""
from .config import TrainConfig
from .errors import (ConfigError, CoverageError, FormatError, HVPLError, NumericError, ShapeError,
                     StateError, UsageError)

__all__ = ["TrainConfig", "ConfigError", "CoverageError", "FormatError", "HVPLError", "NumericError",
           "ShapeError", "StateError", "UsageError"]
__version__ = "0.1.0"
