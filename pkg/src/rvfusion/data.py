"""Synthetic frames, training samples and datasets on disk."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classes import BOX_CLASSES, UNKNOWN
from .errors import DataError
from .fusion import compute_pixel_mapping
from .io import Frame, GroundTruthBoxes, read_frame, write_frame
from .nn.model import feature_index
from .rangeimage import LidarSweep, RangeImage, build_range_image
from .synth import SceneConfig, SensorRig, generate_scene, raycast_lidar, render_camera

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def frame_seed(base_seed: int, index: int) -> int:
    """Per-frame scene seed derived from the dataset seed."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def make_frame(scene_cfg: SceneConfig, rig: SensorRig, seed: int, timestamp: float = 0.0) -> Frame:
    """Simulate one frame.  The range image is built from the float32 sweep
    that gets stored, so the frame is self-consistent after a round trip."""
    scene = generate_scene(scene_cfg, seed)
    hits = raycast_lidar(scene, rig, timestamp)
    s = hits.sweep
    sweep = LidarSweep(
        s.r.astype(np.float32), s.e.astype(np.float32), s.theta.astype(np.float32), s.laser_id, timestamp
    )
    cfg = rig.range_config()
    img = build_range_image(sweep, cfg)
    boxes = GroundTruthBoxes(
        [int(o.cls) for o in scene.objects],
        [o.object_id for o in scene.objects],
        [[o.box.x, o.box.y, o.box.z, o.box.length, o.box.width, o.box.height, o.box.yaw] for o in scene.objects],
    )
    return Frame(rig.camera, cfg, sweep, img, render_camera(scene, rig), hits.labels, hits.object_ids, boxes)


def range_image64(frame: Frame) -> RangeImage:
    return RangeImage(frame.range_image.grid.astype(np.float64), frame.range_image.point_index)


def cell_labels(frame: Frame) -> np.ndarray:
    """Semantic label per range-image cell; -1 where unoccupied."""
    idx = frame.range_image.point_index
    return np.where(idx >= 0, frame.labels[np.maximum(idx, 0)], -1)


def cell_box_targets(frame: Frame, points: np.ndarray) -> np.ndarray:
    """``(6, L, W)`` regression targets for object cells, zeros elsewhere."""
    L, W = frame.range_image.shape
    out = np.zeros((L, W, 6), dtype=np.float32)
    idx = frame.range_image.point_index
    oid = np.where(idx >= 0, frame.object_ids[np.maximum(idx, 0)], -1)
    lab = cell_labels(frame)
    for k in range(len(frame.boxes)):
        if frame.boxes.cls[k] not in [int(c) for c in BOX_CLASSES]:
            continue
        sel = (oid == frame.boxes.object_id[k]) & np.isin(lab, [int(c) for c in BOX_CLASSES])
        if not np.any(sel):
            continue
        x, y, _, length, width, _, yaw = frame.boxes.params[k].astype(np.float64)
        p = points[sel]
        out[sel] = np.stack(
            [x - p[:, 0], y - p[:, 1],
             np.full(len(p), np.log(width)), np.full(len(p), np.log(length)),
             np.full(len(p), np.sin(yaw)), np.full(len(p), np.cos(yaw))],
            axis=1,
        )
    return out.transpose(2, 0, 1).copy()


@dataclass
class Sample:
    """Network-ready arrays of one frame (channels first)."""

    lidar: np.ndarray
    rgb: np.ndarray
    index: np.ndarray
    labels: np.ndarray
    boxes: np.ndarray


def frame_to_sample(frame: Frame) -> Sample:
    img = range_image64(frame)
    mapping = compute_pixel_mapping(img, frame.range_config, frame.calibration)
    points = img.cell_points(frame.range_config)
    return Sample(
        lidar=frame.range_image.grid.transpose(2, 0, 1).copy(),
        rgb=frame.camera.transpose(2, 0, 1).copy(),
        index=feature_index(mapping),
        labels=cell_labels(frame),
        boxes=cell_box_targets(frame, points),
    )


def point_evaluation(frame: Frame, cell_pred: np.ndarray):
    """Per-return ``(pred, gt, bev_range)`` for returns inside the image crop.

    A return that lost its cell to a closer one is unknown in both ``pred``
    and ``gt``, so it drops out of every count.
    """
    cfg = frame.range_config
    s = frame.sweep
    col, inside = cfg.columns(s.theta.astype(np.float64))
    row = cfg.laser_rows[s.laser_id]
    ids = np.flatnonzero(inside)
    r, c = row[ids], col[ids]
    winner = frame.range_image.point_index[r, c] == ids
    gt = np.where(winner, frame.labels[ids], UNKNOWN)
    pred = np.where(winner, cell_pred[r, c], UNKNOWN)
    phi = np.asarray(cfg.elevation_table)[s.laser_id[ids]]
    dist = s.r[ids].astype(np.float64) * np.cos(phi)
    return pred, gt, dist


# ---------------------------------------------------------------- datasets


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def generate_dataset(out_dir, count: int, scene_cfg: SceneConfig, rig: SensorRig, seed: int, config_digest: str = "") -> dict:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {out}: {exc}") from exc
    entries = []
    for i in range(count):
        fs = frame_seed(seed, i)
        name = f"frame_{i:05d}.rfrm"
        frame = make_frame(scene_cfg, rig, fs, timestamp=0.1 * i)
        write_frame(frame, out / name)
        entries.append({"file": name, "seed": fs, "sha256": file_digest(out / name)})
        if (i + 1) % 50 == 0:
            log.info("generated %d/%d frames", i + 1, count)
    manifest = {"format": "rvfusion-dataset", "version": 1, "seed": int(seed), "config_digest": config_digest, "count": count, "frames": entries}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST
    if not path.is_file():
        raise DataError(f"no dataset manifest at {path}")
    return json.loads(path.read_text())


def split_indices(count: int, eval_fraction: float) -> tuple[list, list]:
    """Last ``eval_fraction`` of frames for evaluation, the rest for training."""
    n_eval = int(round(count * eval_fraction))
    return list(range(count - n_eval)), list(range(count - n_eval, count))


def load_frames(data_dir, indices=None) -> list[Frame]:
    manifest = load_manifest(data_dir)
    files = [e["file"] for e in manifest["frames"]]
    if indices is not None:
        files = [files[i] for i in indices]
    frames = []
    for f in files:
        p = Path(data_dir) / f
        if not p.is_file():
            raise DataError(f"dataset frame missing: {p}")
        frames.append(read_frame(p))
    return frames
