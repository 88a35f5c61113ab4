"""Selective evaluation with LLM judges under a human-agreement guarantee."""

__version__ = "0.1.0"

from .core import Dataset, Label, PreferenceInstance, load_dataset, majority_label
from .errors import BackendError, SelectiveEvalError, ValidationError
from .risk import ALWAYS_ABSTAIN, EvalRecord, ThresholdSet, binomial_upper_bound, calibrate_cascade, calibrate_single

__all__ = [
    "ALWAYS_ABSTAIN",
    "BackendError",
    "Dataset",
    "EvalRecord",
    "Label",
    "PreferenceInstance",
    "SelectiveEvalError",
    "ThresholdSet",
    "ValidationError",
    "binomial_upper_bound",
    "calibrate_cascade",
    "calibrate_single",
    "load_dataset",
    "majority_label",
]
