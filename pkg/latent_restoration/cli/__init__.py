"""
Experiment runner: dataset synthesis, config files, orchestration and the
command-line interface.
"""

from .config_io import apply_overrides, parse_config, parse_config_text, parse_ranges, serialize_config, write_config
from .datasets import DatasetContainer, dataset_hash, degrade_dataset, load_dataset, save_dataset, synth_dataset
from .experiment import RunResult, check_manifest, run_ablation, run_experiment

__all__ = [
    "DatasetContainer",
    "RunResult",
    "apply_overrides",
    "check_manifest",
    "dataset_hash",
    "degrade_dataset",
    "load_dataset",
    "parse_config",
    "parse_config_text",
    "parse_ranges",
    "run_ablation",
    "run_experiment",
    "save_dataset",
    "serialize_config",
    "synth_dataset",
    "write_config",
]
