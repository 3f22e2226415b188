"""Secure-aggregation lab: pairwise-masking protocols over a deterministic simulated network."""

from .errors import ConfigurationError, ExperimentFailure, SecAggLabError
from .simnet import DropoutSchedule, MessageLedger, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DropoutSchedule", "ExperimentFailure", "MessageLedger", "SecAggLabError",
    "run_experiment", "__version__",
]
