"""Experiment orchestration: configuration, runs, mode histograms and output files."""
from .config import RunConfig, load_config, validate_config
from .runner import ModeBucket, RunResult, cluster_modes, run_experiment

__all__ = ["RunConfig", "load_config", "validate_config", "ModeBucket", "RunResult", "cluster_modes",
           "run_experiment"]
