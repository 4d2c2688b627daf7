"""Dual-stream residual-decreasing boosting forecaster on a small numpy autodiff engine."""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    DataError,
    NormStats,
    SeriesDataset,
    WindowBatch,
    all_windows,
    chronological_split,
    instance_denormalize,
    instance_normalize,
    load_csv,
    make_windows,
)
from .metrics import MetricReport, compute_metrics
from .model import ModelConfig, decompose, init_params, model_forward, predict
from .tensor import Tensor, backward, finite_diff_check, no_grad
from .training import TrainConfig, TrainHistory, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "DataError", "MetricReport", "ModelConfig", "NormStats", "SeriesDataset", "Tensor", "TrainConfig",
    "TrainHistory", "WindowBatch", "all_windows", "backward", "chronological_split", "compute_metrics",
    "decompose", "evaluate", "finite_diff_check", "init_params", "instance_denormalize", "instance_normalize",
    "load_checkpoint", "load_csv", "make_windows", "model_forward", "no_grad", "predict", "save_checkpoint",
    "train",
]
