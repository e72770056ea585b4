"""Datasets, training loops, metrics and checkpoints."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Sample, load_manifest, make_synthetic_corpus, resolve_paths, write_manifest
from .evaluate import Degradation, evaluate, score_samples
from .metrics import Metrics, accuracy, average_precision, compute_metrics
from .train import TrainConfig, train_essp, train_ssp

__all__ = [
    "Checkpoint",
    "Degradation",
    "Metrics",
    "Sample",
    "TrainConfig",
    "accuracy",
    "average_precision",
    "compute_metrics",
    "evaluate",
    "load_checkpoint",
    "load_manifest",
    "make_synthetic_corpus",
    "resolve_paths",
    "save_checkpoint",
    "score_samples",
    "train_essp",
    "train_ssp",
    "write_manifest",
]
