"""Average precision with rotated BEV IoU, range buckets, and box decoding/NMS."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from ..classes import NUM_CLASSES, detection_class
from ..rangeimage import RangeImage
from .boxes import BoxBEV, rotated_iou

RANGE_BUCKETS = {
    "0-70m": (0.0, 70.0),
    "0-30m": (0.0, 30.0),
    "30-50m": (30.0, 50.0),
    "50-70m": (50.0, 70.0),
}

IOU_THRESHOLDS = {"vehicle": 0.7, "pedestrian": 0.5, "bike": 0.5}


@dataclass(frozen=True)
class Detection:
    box: BoxBEV
    label: str
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    box: BoxBEV
    label: str


def in_bucket(distance: float, bucket) -> bool:
    if bucket is None:
        return True
    lo, hi = bucket
    return lo <= distance < hi


def greedy_match(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float):
    """Match detections in descending confidence (stable on ties).

    Each detection takes the unmatched ground truth with the highest IoU,
    provided it reaches ``iou_threshold``.  Returns ``(order, matched)`` where
    ``matched[k]`` is the ground-truth index of the k-th ranked detection or -1.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    taken = [False] * len(gts)
    matched = []
    for i in order:
        best, best_iou = -1, iou_threshold
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            iou = rotated_iou(dets[i].box, g.box)
            if iou >= best_iou and (best < 0 or iou > best_iou):
                best, best_iou = j, iou
        if best >= 0:
            taken[best] = True
        matched.append(best)
    return order, matched


def average_precision(tp, npos: int) -> float:
    """All-point interpolated area under the PR curve for a ranked TP flag list.

    Computed with exact rationals (counts are integers), so the only rounding
    is the final conversion to float.
    """
    flags = [bool(f) for f in np.asarray(tp).ravel()]
    if not flags or npos <= 0:
        return 0.0
    prec = []
    hits = 0
    for k, f in enumerate(flags, 1):
        hits += f
        prec.append(Fraction(hits, k))
    # precision envelope: max precision at this or any later rank
    env = prec[:]
    for k in range(len(env) - 2, -1, -1):
        env[k] = max(env[k], env[k + 1])
    area = sum((env[k] for k, f in enumerate(flags) if f), Fraction(0))
    return float(area / npos)


def compute_ap(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_threshold: float,
    bucket=None,
) -> Optional[float]:
    """AP of single-class detections against single-class ground truths.

    Matching uses every ground truth; the ``(lo, hi)`` bucket then keeps
    ground truths whose center range is inside it, true positives whose
    matched ground truth is inside it, and false positives whose own center
    is inside it.  Returns ``None`` when the bucket has no ground truth.
    """
    npos = sum(in_bucket(g.box.center_range, bucket) for g in gts)
    if npos == 0:
        return None
    order, matched = greedy_match(dets, gts, iou_threshold)
    flags = []
    for i, j in zip(order, matched):
        if j >= 0:
            if in_bucket(gts[j].box.center_range, bucket):
                flags.append(1.0)
        elif in_bucket(dets[i].box.center_range, bucket):
            flags.append(0.0)
    return average_precision(np.array(flags), npos)


def evaluate_frames(frames, iou_thresholds=IOU_THRESHOLDS, buckets=RANGE_BUCKETS):
    """AP per class and bucket over many frames.

    ``frames``: iterable of ``(detections, ground_truths)``.  Matching is done
    per frame, then ranked jointly by confidence.
    """
    per_class = {c: {"scored": [], "gts": []} for c in iou_thresholds}
    for dets, gts in frames:
        for cname, thr in iou_thresholds.items():
            d = [x for x in dets if x.label == cname]
            g = [x for x in gts if x.label == cname]
            order, matched = greedy_match(d, g, thr)
            for i, j in zip(order, matched):
                dist = g[j].box.center_range if j >= 0 else d[i].box.center_range
                per_class[cname]["scored"].append((d[i].confidence, j >= 0, dist))
            per_class[cname]["gts"].extend(x.box.center_range for x in g)
    result = {}
    for cname, acc in per_class.items():
        scored = sorted(acc["scored"], key=lambda t: -t[0])
        for bname, bucket in buckets.items():
            npos = sum(in_bucket(d, bucket) for d in acc["gts"])
            if npos == 0:
                result[(cname, bname)] = None
                continue
            flags = [1.0 if tp else 0.0 for _, tp, dist in scored if in_bucket(dist, bucket)]
            result[(cname, bname)] = average_precision(np.array(flags), npos)
    return result


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def decode_boxes(pred, img: RangeImage, points: np.ndarray, conf_threshold: float, merge_bikes: bool = True):
    """Per-cell candidate detections before suppression.

    ``points``: ``(L, W, 3)`` cell points (see :meth:`RangeImage.cell_points`).
    """
    probs = softmax(pred.class_logits.astype(np.float64))
    cls = probs.argmax(-1)
    conf = np.take_along_axis(probs, cls[..., None], -1)[..., 0]
    keep = img.occupied & (cls >= 2) & (conf >= conf_threshold)
    out = []
    bp = pred.box_params.astype(np.float64)
    for r, c in zip(*np.nonzero(keep)):
        dx, dy, log_w, log_l, s, co = bp[r, c]
        w = math.exp(min(log_w, 5.0))
        length = math.exp(min(log_l, 5.0))
        box = BoxBEV(points[r, c, 0] + dx, points[r, c, 1] + dy, length, w, math.atan2(s, co))
        out.append(Detection(box, detection_class(int(cls[r, c]), merge_bikes), float(min(conf[r, c], 1.0))))
    return out


def nms(dets: Sequence[Detection], iou_threshold: float) -> list:
    """Greedy class-aware suppression by descending confidence."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    if not order:
        return []
    xy = np.array([[d.box.x, d.box.y] for d in dets])
    rad = np.array([d.box.radius for d in dets])
    suppressed = np.zeros(len(dets), dtype=bool)
    kept = []
    for i in order:
        if suppressed[i]:
            continue
        kept.append(dets[i])
        near = np.flatnonzero(np.hypot(*(xy - xy[i]).T) <= rad + rad[i])
        for j in near:
            if j == i or suppressed[j] or dets[j].label != dets[i].label:
                continue
            if rotated_iou(dets[i].box, dets[j].box) >= iou_threshold:
                suppressed[j] = True
    return kept


def decode_and_nms(pred, img: RangeImage, cfg, conf_threshold: float = 0.5, nms_iou: float = 0.3, merge_bikes: bool = True):
    """Decode one box per confident object cell, then suppress duplicates."""
    if pred.class_logits.shape[:2] != img.shape or pred.class_logits.shape[2] != NUM_CLASSES:
        raise ValueError("prediction shape does not match range image")
    points = img.cell_points(cfg)
    return nms(decode_boxes(pred, img, points, conf_threshold, merge_bikes), nms_iou)
