"""Observation-adaptive trajectory forecasting on synthetic driving scenes."""

from ._core import (
    ConfigError,
    DependencyError,
    Error,
    FormatError,
    Scene,
    TimeLayout,
    ade,
    cosine_alpha,
    fde,
    generate_scenes,
    load_checkpoint,
    min_ade_k,
    min_fde_k,
    miss_rate_k,
    predict,
    read_dataset,
    run_cli,
    truncate_history,
)

__all__ = [
    "ConfigError",
    "DependencyError",
    "Error",
    "FormatError",
    "Scene",
    "TimeLayout",
    "ade",
    "cosine_alpha",
    "fde",
    "generate_scenes",
    "load_checkpoint",
    "min_ade_k",
    "min_fde_k",
    "miss_rate_k",
    "predict",
    "read_dataset",
    "run_cli",
    "truncate_history",
]
__version__ = "1.0.0"
