"""Per-cell classification and box losses."""
from __future__ import annotations

import torch
import torch.nn.functional as F

from ..classes import BOX_CLASSES

IGNORE = -1


def focal_loss(logits: torch.Tensor, labels: torch.Tensor, gamma: float = 2.0, class_weights=None):
    """Mean of ``-w_c (1 - p_t)^gamma log p_t`` over cells with a label.

    ``logits``: ``(N, K)``; ``labels``: ``(N,)`` with ``-1`` for cells that do not
    contribute (unoccupied or unknown).  Returns ``(loss, count)``; the loss is
    zero when nothing contributes.
    """
    keep = labels >= 0
    count = int(keep.sum())
    if count == 0:
        return logits.sum() * 0.0, 0
    lg = logits[keep]
    y = labels[keep]
    logp = F.log_softmax(lg, dim=1).gather(1, y[:, None])[:, 0]
    pt = logp.exp()
    loss = -((1.0 - pt) ** gamma) * logp if gamma else -logp
    if class_weights is not None:
        w = torch.as_tensor(class_weights, dtype=lg.dtype)
        loss = loss * w[y]
    return loss.mean(), count


def box_loss(pred: torch.Tensor, target: torch.Tensor, labels: torch.Tensor):
    """Mean absolute error over the six box parameters of object cells.

    ``pred``/``target``: ``(N, 6)``.  Only cells labeled vehicle, pedestrian,
    bicycle or motorcycle contribute.  Returns ``(loss, count)``.
    """
    keep = torch.zeros_like(labels, dtype=torch.bool)
    for c in BOX_CLASSES:
        keep |= labels == int(c)
    count = int(keep.sum())
    if count == 0:
        return pred.sum() * 0.0, 0
    return (pred[keep] - target[keep]).abs().mean(), count
