"""Foreground-aware segmentation for high spatial resolution imagery."""
from .config import ExperimentConfig, load_config, make_config
from .errors import ConfigError, DataError, DimensionError, FarSegError, NumericError
from .loss import FaLossConfig, fa_loss
from .model import BackboneConfig, FarSeg, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig", "ConfigError", "DataError", "DimensionError", "ExperimentConfig", "FaLossConfig",
    "FarSeg", "FarSegError", "ModelConfig", "NumericError", "fa_loss", "load_config", "make_config",
]
