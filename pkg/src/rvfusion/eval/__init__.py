"""Detection and segmentation evaluation."""
from .boxes import BoxBEV, rotated_iou
from .detection import (
    IOU_THRESHOLDS,
    RANGE_BUCKETS,
    Detection,
    GroundTruth,
    average_precision,
    compute_ap,
    decode_and_nms,
    evaluate_frames,
    greedy_match,
    nms,
)
from .segmentation import SegmentationReport, confusion_matrix, metrics_from_confusion, segmentation_metrics

__all__ = [
    "BoxBEV",
    "rotated_iou",
    "IOU_THRESHOLDS",
    "RANGE_BUCKETS",
    "Detection",
    "GroundTruth",
    "average_precision",
    "compute_ap",
    "decode_and_nms",
    "evaluate_frames",
    "greedy_match",
    "nms",
    "SegmentationReport",
    "confusion_matrix",
    "metrics_from_confusion",
    "segmentation_metrics",
]
