"""Batches, learning-rate schedule and the Adam training step."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import NumericError
from .losses import box_loss, focal_loss
from .model import FusionNet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 4
    lr: float = 0.002
    lr_decay: float = 0.99
    lr_decay_every: int = 150
    box_weight: float = 1.0
    focal_gamma: float = 2.0
    class_weights: tuple = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    seed: int = 0


def learning_rate(step: int, base: float = 0.002, decay: float = 0.99, every: int = 150) -> float:
    """Staircase exponential decay: ``base * decay ** (step // every)``."""
    return base * decay ** (step // every)


@dataclass
class Batch:
    """Stacked training tensors.

    lidar ``(B, 5, L, W)``, rgb ``(B, 3, H, W)``, index ``(B, L, W)`` flat pixel
    index at feature scale, labels ``(B, L, W)`` with -1 for ignored cells,
    boxes ``(B, 6, L, W)``.
    """

    lidar: torch.Tensor
    rgb: torch.Tensor
    index: torch.Tensor
    labels: torch.Tensor
    boxes: torch.Tensor

    @classmethod
    def stack(cls, samples, dtype=torch.float32, drop_image=False) -> "Batch":
        """Build a batch from ``Sample``-like objects (see :mod:`rvfusion.data`).

        ``drop_image`` replaces every mapping with an all-absent one.
        """
        index = np.stack([s.index for s in samples])
        if drop_image:
            index = np.full_like(index, -1)
        return cls(
            lidar=torch.as_tensor(np.stack([s.lidar for s in samples]), dtype=dtype),
            rgb=torch.as_tensor(np.stack([s.rgb for s in samples]), dtype=dtype),
            index=torch.as_tensor(index, dtype=torch.int64),
            labels=torch.as_tensor(np.stack([s.labels for s in samples]), dtype=torch.int64),
            boxes=torch.as_tensor(np.stack([s.boxes for s in samples]), dtype=dtype),
        )


def total_loss(net: FusionNet, batch: Batch, cfg: TrainConfig):
    logits, box = net(batch.lidar, batch.rgb, batch.index)
    flat_logits = logits.permute(0, 2, 3, 1).reshape(-1, logits.shape[1])
    flat_box = box.permute(0, 2, 3, 1).reshape(-1, box.shape[1])
    labels = batch.labels.reshape(-1)
    targets = batch.boxes.permute(0, 2, 3, 1).reshape(-1, box.shape[1])
    cls_loss, n_cls = focal_loss(flat_logits, labels, cfg.focal_gamma, cfg.class_weights)
    reg_loss, _ = box_loss(flat_box, targets, labels)
    return cls_loss + cfg.box_weight * reg_loss, cls_loss, reg_loss, n_cls


class Trainer:
    """Owns the network, its Adam state and the step counter."""

    def __init__(self, net: FusionNet, cfg: TrainConfig = TrainConfig()):
        self.net = net
        self.cfg = cfg
        self.step = 0
        self.optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr)

    def current_lr(self) -> float:
        return learning_rate(self.step, self.cfg.lr, self.cfg.lr_decay, self.cfg.lr_decay_every)

    def train_step(self, batch: Batch) -> dict:
        lr = self.current_lr()
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.net.train()
        self.optimizer.zero_grad(set_to_none=True)
        loss, cls_loss, reg_loss, n_cls = total_loss(self.net, batch, self.cfg)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at step {self.step}", step=self.step)
        if n_cls == 0:
            log.warning("step %d: no labeled cells in batch, classification loss is zero", self.step)
        loss.backward()
        if lr > 0:
            self.optimizer.step()
        record = {
            "step": self.step,
            "lr": lr,
            "loss": value,
            "focal": cls_loss.item(),
            "box": reg_loss.item(),
            "labeled_cells": n_cls,
        }
        self.step += 1
        return record


def train_step(batch: Batch, trainer: Trainer) -> dict:
    return trainer.train_step(batch)
