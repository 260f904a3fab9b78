"""Multi-resolution even/odd convolutional forecasting engine."""

from .errors import (
    CheckpointError,
    ConfigError,
    DimensionError,
    NumericError,
    ScinetError,
    UsageError,
)
from .tensor import Tape, Tensor, backward, finite_diff_check
from .model import ModelConfig, SCIBlock, SCINetTree, StackedSCINet, build_model, compute_loss, realign, split_even_odd
from .nn import DecoderLayer, InteractionModule, dropout_forward
from .data import NormStats, SplitSpec, TimeSeriesFrame, WindowDataset, batch_iter, fit_normalizer, load_csv, split, synthetic_frame
from .metrics import MetricReport, PEConfig, PEReport, compute_metrics, pe_report, permutation_entropy
from .train import Adam, FitResult, TrainConfig, evaluate, fit, load_checkpoint, save_checkpoint, should_stop, train_epoch

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "CheckpointError",
    "ConfigError",
    "DecoderLayer",
    "DimensionError",
    "FitResult",
    "InteractionModule",
    "MetricReport",
    "ModelConfig",
    "NormStats",
    "NumericError",
    "PEConfig",
    "PEReport",
    "SCIBlock",
    "SCINetTree",
    "ScinetError",
    "SplitSpec",
    "StackedSCINet",
    "Tape",
    "Tensor",
    "TimeSeriesFrame",
    "TrainConfig",
    "UsageError",
    "WindowDataset",
    "backward",
    "batch_iter",
    "build_model",
    "compute_loss",
    "compute_metrics",
    "dropout_forward",
    "evaluate",
    "finite_diff_check",
    "fit",
    "fit_normalizer",
    "load_checkpoint",
    "load_csv",
    "pe_report",
    "permutation_entropy",
    "realign",
    "save_checkpoint",
    "should_stop",
    "split",
    "split_even_odd",
    "synthetic_frame",
    "train_epoch",
]
