"""Federated training simulator with sliding training windows and runtime-budgeted tensor selection."""

from .config import RunConfig, load_config
from .federation import RunResult, aggregate, run_training, time_to_accuracy
from .model import ConfigurationError, ContractViolation, build_model
from .profiler import DeviceProfile, TensorTiming, synthesize_timing
from .selector import BACKEND, SelectionMask, backward_time, brute_force_select, select_tensors
from .window import BlockPartition, Variant, Window

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BlockPartition",
    "ConfigurationError",
    "ContractViolation",
    "DeviceProfile",
    "RunConfig",
    "RunResult",
    "SelectionMask",
    "TensorTiming",
    "Variant",
    "Window",
    "aggregate",
    "backward_time",
    "brute_force_select",
    "build_model",
    "load_config",
    "run_training",
    "select_tensors",
    "synthesize_timing",
    "time_to_accuracy",
]
