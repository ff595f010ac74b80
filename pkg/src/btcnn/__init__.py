"""Small from-scratch CNN for three-class brain tumor MRI classification."""
__version__ = "0.1.0"

from ._accel import BACKEND
from .dataset import CLASS_NAMES, Label, load_manifest, load_record, stratified_split
from .evaluation import aggregate_metrics, comparison_report, confusion_matrix, per_class_metrics
from .model import build_architecture, forward, forward_batch, init_params, param_count
from .preprocess import Variant, preprocess
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "BACKEND",
    "CLASS_NAMES",
    "Label",
    "TrainConfig",
    "Variant",
    "aggregate_metrics",
    "build_architecture",
    "comparison_report",
    "confusion_matrix",
    "forward",
    "forward_batch",
    "init_params",
    "load_checkpoint",
    "load_manifest",
    "load_record",
    "param_count",
    "per_class_metrics",
    "preprocess",
    "save_checkpoint",
    "stratified_split",
    "train",
]
