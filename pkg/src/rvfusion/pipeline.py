"""Training, evaluation and benchmarking loops shared by the CLI and tests."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .classes import NUM_CLASSES, detection_class
from .data import Sample, cell_box_targets, cell_labels, point_evaluation, range_image64
from .errors import DataError
from .eval.boxes import BoxBEV
from .eval.detection import RANGE_BUCKETS, GroundTruth, decode_and_nms, evaluate_frames
from .eval.segmentation import metrics_from_confusion
from .fusion import compute_pixel_mapping
from .io import read_checkpoint, write_checkpoint
from .nn.model import FusionNet, NetConfig, PerPointPrediction, fused_forward
from .nn.train import Batch, TrainConfig, Trainer

log = logging.getLogger(__name__)

MODES = ("fused", "lidar-only")


def train_model(samples: list[Sample], net_cfg: NetConfig, train_cfg: TrainConfig, mode: str = "fused", log_every: int = 50, callback=None):
    """Train from scratch; returns ``(net, history)``.

    ``lidar-only`` keeps the same network and parameter count but feeds an
    all-absent mapping, so image features are always zero.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    torch.manual_seed(train_cfg.seed)
    net = FusionNet(net_cfg)
    trainer = Trainer(net, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    history = []
    bs = min(train_cfg.batch_size, len(samples))
    for _ in range(train_cfg.iterations):
        pick = rng.choice(len(samples), size=bs, replace=False)
        batch = Batch.stack([samples[i] for i in pick], drop_image=(mode == "lidar-only"))
        rec = trainer.train_step(batch)
        history.append(rec)
        if callback is not None:
            callback(rec)
        if log_every and (rec["step"] % log_every == 0 or rec["step"] == train_cfg.iterations - 1):
            log.info("[%s] step %5d  lr %.6f  loss %.4f  focal %.4f  box %.4f",
                     mode, rec["step"], rec["lr"], rec["loss"], rec["focal"], rec["box"])
    return net, history


@dataclass
class EvalResult:
    confusion: dict = field(default_factory=dict)  # bucket -> 6x6 counts
    ap: dict = field(default_factory=dict)  # (class, bucket) -> AP or None

    def segmentation(self, bucket: str = "0-70m"):
        return metrics_from_confusion(self.confusion[bucket])

    def miou(self, bucket: str) -> float:
        return self.segmentation(bucket).miou


def visible_objects(frame) -> set:
    """Object ids owning at least one range-image cell."""
    idx = frame.range_image.point_index
    return set(np.unique(frame.object_ids[idx[idx >= 0]]).tolist())


def frame_ground_truth(frame, merge_bikes=True) -> list:
    """Evaluation boxes: objects the LiDAR actually sees inside the crop."""
    seen = visible_objects(frame)
    out = []
    for c, oid, p in zip(frame.boxes.cls, frame.boxes.object_id, frame.boxes.params.astype(np.float64)):
        label = detection_class(int(c), merge_bikes)
        if label is None or int(oid) not in seen:
            continue
        out.append(GroundTruth(BoxBEV(p[0], p[1], p[3], p[4], p[6]), label))
    return out


def predict_cells(net: FusionNet, frame, mode: str = "fused"):
    img = range_image64(frame)
    mapping = compute_pixel_mapping(img, frame.range_config, frame.calibration)
    if mode == "lidar-only":
        mapping = mapping.empty_like()
    return fused_forward(img, frame.camera, mapping, net)


def oracle_prediction(frame) -> PerPointPrediction:
    """Ground truth dressed up as network output."""
    lab = cell_labels(frame)
    logits = np.full(lab.shape + (NUM_CLASSES,), -20.0, dtype=np.float32)
    cls = np.where(lab >= 0, lab, 0)
    np.put_along_axis(logits, cls[..., None], 20.0, axis=-1)
    img = range_image64(frame)
    boxes = cell_box_targets(frame, img.cell_points(frame.range_config))
    return PerPointPrediction(logits, boxes.transpose(1, 2, 0).copy())


def evaluate_model(net: FusionNet, frames, mode: str = "fused", detection: bool = True, conf_threshold=0.5, nms_iou=0.3, iou_thresholds=None, merge_bikes=True, predictor=None) -> EvalResult:
    """Segmentation confusion per range bucket and, optionally, detection AP.

    ``predictor(frame)`` may replace the network (e.g. to feed ground truth).
    """
    from .eval.detection import IOU_THRESHOLDS

    res = EvalResult({b: np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64) for b in RANGE_BUCKETS})
    det_frames = []
    net_eval = net.eval() if net is not None else None
    for frame in frames:
        pred = predictor(frame) if predictor is not None else predict_cells(net_eval, frame, mode)
        cell_cls = pred.class_logits.argmax(-1)
        p, g, dist = point_evaluation(frame, cell_cls)
        keep = g >= 0
        for b, rng in RANGE_BUCKETS.items():
            sel = keep & (dist >= rng[0]) & (dist < rng[1])
            res.confusion[b] += np.bincount(g[sel] * NUM_CLASSES + p[sel], minlength=NUM_CLASSES ** 2).reshape(NUM_CLASSES, NUM_CLASSES)
        if detection:
            dets = decode_and_nms(pred, range_image64(frame), frame.range_config, conf_threshold, nms_iou, merge_bikes)
            det_frames.append((dets, frame_ground_truth(frame, merge_bikes)))
    if detection:
        res.ap = evaluate_frames(det_frames, iou_thresholds or IOU_THRESHOLDS, RANGE_BUCKETS)
    return res


# ---------------------------------------------------------------- checkpoints


def save_net(net: FusionNet, path, metadata: dict) -> None:
    meta = dict(metadata)
    meta["net"] = {"aux_channels": list(net.cfg.aux_channels), "primary_channels": list(net.cfg.primary_channels), "seed": net.cfg.seed}
    write_checkpoint(path, {k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}, meta)


def load_net(path) -> tuple[FusionNet, dict]:
    tensors, meta = read_checkpoint(path)
    if "net" not in meta:
        raise DataError(f"{path}: checkpoint has no network description")
    n = meta["net"]
    net = FusionNet(NetConfig(tuple(n["aux_channels"]), tuple(n["primary_channels"]), n["seed"]))
    state = net.state_dict()
    if set(state) != set(tensors):
        raise DataError("checkpoint tensors do not match the network architecture")
    for k, v in tensors.items():
        if tuple(state[k].shape) != v.shape:
            raise DataError(f"checkpoint tensor {k} has shape {v.shape}, expected {tuple(state[k].shape)}")
    net.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in tensors.items()})
    return net, meta


# ---------------------------------------------------------------- benchmark


def benchmark(net: FusionNet, sample: Sample, runs: int = 100, warmup: int = 5) -> dict:
    """Wall-clock forward-pass timing in milliseconds."""
    batch = Batch.stack([sample])
    net.eval()
    times = []
    with torch.no_grad():
        for _ in range(warmup):
            net(batch.lidar, batch.rgb, batch.index)
        for _ in range(runs):
            t0 = time.perf_counter()
            net(batch.lidar, batch.rgb, batch.index)
            times.append(1000.0 * (time.perf_counter() - t0))
    t = np.array(times)
    return {
        "runs": len(times),
        "warmup": warmup,
        "mean_ms": float(t.mean()) if len(t) else float("nan"),
        "median_ms": float(np.median(t)) if len(t) else float("nan"),
        "min_ms": float(t.min()) if len(t) else float("nan"),
        "max_ms": float(t.max()) if len(t) else float("nan"),
        "threads": torch.get_num_threads(),
        "params": net.param_count(),
    }
