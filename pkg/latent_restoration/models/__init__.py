"""
Configuration and report models shared by all modules.
"""

from .configs import (
    AutoEncoderConfig,
    AutoEncoderKind,
    DatasetSpec,
    DegradationParams,
    ExperimentConfig,
    FlowConfig,
    FlowObjective,
    GeneratorKind,
    OptimizerConfig,
    ParamRanges,
    RestoreConfig,
    TaskKind,
    TrainingConfig,
)
from .reports import AblationRow, BoundReport, EpochRecord, LossReport, MetricsReport

__all__ = [
    "AutoEncoderConfig",
    "AutoEncoderKind",
    "DatasetSpec",
    "DegradationParams",
    "ExperimentConfig",
    "FlowConfig",
    "FlowObjective",
    "GeneratorKind",
    "OptimizerConfig",
    "ParamRanges",
    "RestoreConfig",
    "TaskKind",
    "TrainingConfig",
    "AblationRow",
    "BoundReport",
    "EpochRecord",
    "LossReport",
    "MetricsReport",
]
