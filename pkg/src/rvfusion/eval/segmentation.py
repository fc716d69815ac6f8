"""Point-wise semantic segmentation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..classes import NUM_CLASSES


@dataclass
class SegmentationReport:
    confusion: np.ndarray  # rows = ground truth, cols = prediction
    class_iou: np.ndarray  # NaN for classes absent from ground truth
    class_acc: np.ndarray
    miou: float
    macc: float

    @property
    def present(self) -> np.ndarray:
        return self.confusion.sum(axis=1) > 0


def confusion_matrix(pred, gt, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Counts of (gt, pred) pairs; points with a negative gt or pred label are skipped."""
    pred = np.asarray(pred).ravel().astype(np.int64)
    gt = np.asarray(gt).ravel().astype(np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction and ground truth sizes differ: {pred.shape} vs {gt.shape}")
    keep = (gt >= 0) & (pred >= 0)
    idx = gt[keep] * num_classes + pred[keep]
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def metrics_from_confusion(conf: np.ndarray) -> SegmentationReport:
    conf = np.asarray(conf, dtype=np.int64)
    if conf.sum() == 0:
        raise ValueError("no labeled points to evaluate")
    tp = np.diag(conf).astype(np.float64)
    gt_count = conf.sum(axis=1).astype(np.float64)
    pred_count = conf.sum(axis=0).astype(np.float64)
    present = gt_count > 0
    union = gt_count + pred_count - tp
    iou = np.full(len(tp), np.nan)
    acc = np.full(len(tp), np.nan)
    iou[present] = tp[present] / union[present]
    acc[present] = tp[present] / gt_count[present]
    return SegmentationReport(conf, iou, acc, float(np.mean(iou[present])), float(np.mean(acc[present])))


def segmentation_metrics(pred, gt, num_classes: int = NUM_CLASSES) -> SegmentationReport:
    """Confusion matrix, per-class IoU, mIoU and mAcc over labeled points.

    Points whose ground truth is unknown (-1) are excluded everywhere.
    Classes absent from the ground truth are left out of both means.
    """
    return metrics_from_confusion(confusion_matrix(pred, gt, num_classes))
