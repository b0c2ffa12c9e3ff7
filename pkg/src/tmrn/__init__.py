"""TMRN: text-centred multimodal sentiment regression on a small numpy autodiff engine."""

from .blocks import forward, init_params, named_parameters, parameter_count
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, TmrnConfig
from .data import Sample, SyntheticSpec, generate_synthetic, read_dataset, write_dataset
from .estimator import TMRNRegressor, check_multimodal
from .metrics import MetricsReport, compute_metrics
from .training import evaluate, predict, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "MetricsReport",
    "Sample",
    "SyntheticSpec",
    "TMRNRegressor",
    "TmrnConfig",
    "check_multimodal",
    "compute_metrics",
    "evaluate",
    "forward",
    "generate_synthetic",
    "init_params",
    "load_checkpoint",
    "named_parameters",
    "parameter_count",
    "predict",
    "read_dataset",
    "save_checkpoint",
    "train",
    "write_dataset",
]
