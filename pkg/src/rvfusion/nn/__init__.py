"""Trainable fusion network on top of torch tensors."""
from .layers import ResBlock, conv2d, init_uniform_
from .losses import box_loss, focal_loss
from .model import (
    AUX_STRIDE,
    AuxNet,
    FusionNet,
    NetConfig,
    PerPointPrediction,
    aux_forward,
    feature_index,
    fused_forward,
)
from .train import Batch, TrainConfig, Trainer, learning_rate, total_loss, train_step
from .warp import warp

__all__ = [
    "ResBlock",
    "conv2d",
    "init_uniform_",
    "box_loss",
    "focal_loss",
    "AUX_STRIDE",
    "AuxNet",
    "FusionNet",
    "NetConfig",
    "PerPointPrediction",
    "aux_forward",
    "feature_index",
    "fused_forward",
    "Batch",
    "TrainConfig",
    "Trainer",
    "learning_rate",
    "total_loss",
    "train_step",
    "warp",
]
