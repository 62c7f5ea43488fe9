"""Score-based dynamic data pruning for joint intent/slot classifiers."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("prunekit")
except PackageNotFoundError:  # running from a source tree without install
    __version__ = "0.0.0"

from .curriculum import METHODS, PruneConfig, RunResult, count_steps, run, select_subset
from .data import (
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    inject_mislabels,
    load_jsonl,
    save_jsonl,
    split_dataset,
)
from .errors import ConfigError, DataError, NumericError, PrunekitError
from .kernels import BACKEND
from .model import JointClassifier, forward, predict
from .runtime import CostModel, min_cycle, predict_total_time
from .scoring import ScoreBook, ema_update, score_dataset

__all__ = [
    "BACKEND",
    "METHODS",
    "ConfigError",
    "CostModel",
    "DataError",
    "Dataset",
    "JointClassifier",
    "NumericError",
    "PruneConfig",
    "PrunekitError",
    "RunResult",
    "ScoreBook",
    "SyntheticSpec",
    "count_steps",
    "ema_update",
    "forward",
    "generate_synthetic",
    "inject_mislabels",
    "load_jsonl",
    "min_cycle",
    "predict",
    "predict_total_time",
    "run",
    "save_jsonl",
    "score_dataset",
    "select_subset",
    "split_dataset",
]
