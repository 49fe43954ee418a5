"""Dimension-fusion U-shaped networks for chronic stroke lesion segmentation."""

__version__ = "0.1.0"

from .arch import (
    ArchSpec,
    Model,
    build_model,
    count_parameters,
    parameter_counts,
    preset,
)
from .io import VolumeCase, load_case
from .losses import LossParams, dice_loss, enhanced_mixing_loss, focal_loss
from .metrics import MetricsReport, aggregate, binarize, confusion
from .pipeline import SliceStack, SplitSpec, augment, build_stacks, split_dataset
# the training entry point itself stays at lesionseg.train.train so the
# submodule name is not shadowed by a function
from .train import TrainConfig, compare_losses, evaluate

__all__ = [
    "ArchSpec",
    "LossParams",
    "MetricsReport",
    "Model",
    "SliceStack",
    "SplitSpec",
    "TrainConfig",
    "VolumeCase",
    "aggregate",
    "augment",
    "binarize",
    "build_model",
    "build_stacks",
    "compare_losses",
    "confusion",
    "count_parameters",
    "dice_loss",
    "enhanced_mixing_loss",
    "evaluate",
    "focal_loss",
    "load_case",
    "parameter_counts",
    "preset",
    "split_dataset",
    "__version__",
]
