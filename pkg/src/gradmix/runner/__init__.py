"""Experiment orchestration: configuration, training, evaluation, persistence and the CLI."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, DataConfig, RunConfig, load_config, smoke_config
from .datasets import prepare_split
from .evaluate import eval_corruption, eval_detection, fit_linear_probe, linear_probe
from .export import export_attribution
from .optim import adam_step, cosine_lr
from .report import audit, format_table, merge_reports
from .train import TrainingError, TrainResult, model_from_checkpoint, train, train_step

__all__ = [
    "Checkpoint", "CheckpointError", "ConfigError", "DataConfig", "RunConfig", "TrainResult", "TrainingError",
    "adam_step", "audit", "cosine_lr", "eval_corruption", "eval_detection", "export_attribution",
    "fit_linear_probe", "format_table", "linear_probe", "load_checkpoint", "load_config", "merge_reports",
    "model_from_checkpoint", "prepare_split", "save_checkpoint", "smoke_config", "train", "train_step",
]
