"""Desk-scale federated continual learning simulator."""

from .errors import ConfigError, FCLError
from .runner import ExperimentConfig, RunResult, load_config, run_experiment, sweep

__all__ = ["ConfigError", "ExperimentConfig", "FCLError", "RunResult", "load_config", "run_experiment", "sweep"]
__version__ = "0.1.0"
