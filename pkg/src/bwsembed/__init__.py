"""Metric embeddings learned from best-worst scaling judgements."""

from .autodiff import NonFiniteError, ParameterSet, evaluate_and_grad, finite_diff_check, load_params, save_params
from .model import EncoderConfig, MarginConfig, encode, init_params, margins
from .synth import OracleConfig, generate
from .trainer import Metrics, TrainConfig, eval_metrics, train
from .trial_data import Item, Trial, TrialError, split_dataset

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig",
    "Item",
    "MarginConfig",
    "Metrics",
    "NonFiniteError",
    "OracleConfig",
    "ParameterSet",
    "TrainConfig",
    "Trial",
    "TrialError",
    "encode",
    "eval_metrics",
    "evaluate_and_grad",
    "finite_diff_check",
    "generate",
    "init_params",
    "load_params",
    "margins",
    "save_params",
    "split_dataset",
    "train",
]
