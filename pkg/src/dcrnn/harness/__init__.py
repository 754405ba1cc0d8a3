"""Experiment plumbing: configs, checkpoints, multi-trial runs, reports and the CLI."""
from .checkpoint import Checkpoint, dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from .config import ExperimentSpec, ModelSpec, emit, parse_config, parse_config_text
from .experiment import ExperimentResult, TrialRecord, build_datasets, run_experiment
from .presets import preset
from .report import emit_report, render_report

__all__ = [
    "Checkpoint", "dumps_checkpoint", "loads_checkpoint", "save_checkpoint", "load_checkpoint",
    "ExperimentSpec", "ModelSpec", "parse_config", "parse_config_text", "emit",
    "ExperimentResult", "TrialRecord", "build_datasets", "run_experiment", "preset",
    "render_report", "emit_report",
]
