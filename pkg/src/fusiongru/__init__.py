"""Fusion-GRU future bounding-box forecasting on synthetic egocentric scenes."""

from .config import TrainConfig
from .errors import ConfigError, DatasetParseError, DimensionError, DivergenceError, VersionError
from .model import ModelConfig, PredictionSet, forward, init_params
from .params import ParameterStore

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DatasetParseError",
    "DimensionError",
    "DivergenceError",
    "ModelConfig",
    "ParameterStore",
    "PredictionSet",
    "TrainConfig",
    "VersionError",
    "forward",
    "init_params",
]
