"""Desk-scale trainer for the streaming enhancement engine."""

from nwftrain.container import (
    ContainerFormatError,
    container_bytes,
    container_from_bytes,
    load_container,
    save_container,
)
from nwftrain.modules import PipelineModel, export_weights, load_model
from nwftrain.train import (
    SETUP_IDS,
    TrainConfig,
    TrainingDivergedError,
    config_for,
    grad_check,
    train,
)

__all__ = [
    "ContainerFormatError",
    "container_bytes",
    "container_from_bytes",
    "load_container",
    "save_container",
    "PipelineModel",
    "export_weights",
    "load_model",
    "SETUP_IDS",
    "TrainConfig",
    "TrainingDivergedError",
    "config_for",
    "grad_check",
    "train",
]
