"""Spatial and temporal key-value memories for video person re-identification, on a numpy autodiff core."""

from .config import RunConfig, benchmark_config, load_config
from .model import STMN, ModelConfig, ModelOutput
from .synth_data import SynthConfig, generate_dataset

__all__ = [
    "STMN",
    "ModelConfig",
    "ModelOutput",
    "RunConfig",
    "SynthConfig",
    "benchmark_config",
    "generate_dataset",
    "load_config",
]

__version__ = "0.1.0"
