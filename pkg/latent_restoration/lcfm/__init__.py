"""
Latent consistency flow matching: networks, objectives and the joint trainer.
"""

from .losses import (
    DPTerms,
    FlowNets,
    continue_to_one,
    dp_loss,
    f_map,
    flow_matching_loss,
    l2_coarse_loss,
    sample_times,
    segment_index,
    segment_loss,
    straight_velocity,
    trajectory_point,
    velocity_consistency_loss,
)
from .networks import (
    CoarseEstimator,
    CoarseEstimatorNet,
    VectorField,
    VectorFieldNet,
    pad_t_like,
    time_vector,
)
from .trainer import LCFMTrainer, TrainState, split_checkpoint

__all__ = [
    "CoarseEstimator",
    "CoarseEstimatorNet",
    "DPTerms",
    "FlowNets",
    "LCFMTrainer",
    "TrainState",
    "VectorField",
    "VectorFieldNet",
    "continue_to_one",
    "dp_loss",
    "f_map",
    "flow_matching_loss",
    "l2_coarse_loss",
    "pad_t_like",
    "sample_times",
    "segment_index",
    "segment_loss",
    "split_checkpoint",
    "straight_velocity",
    "time_vector",
    "trajectory_point",
    "velocity_consistency_loss",
]
