"""Run configuration: ``key = value`` text files with documented defaults."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key: (parser, default, description)
OPTIONS = {
    "seed": (int, 0, "dataset seed; frame i uses a seed derived from (seed, i)"),
    "scene.near": (int, 3, "objects placed 5-30 m from the sensor"),
    "scene.mid": (int, 3, "objects placed 30-50 m from the sensor"),
    "scene.far": (int, 4, "objects placed 50-70 m from the sensor"),
    "scene.azimuth_limit_deg": (float, 40.0, "objects are placed within +-this azimuth"),
    "scene.albedo_jitter": (float, 0.06, "std-dev of per-object color jitter"),
    "rig.lidar_width": (int, 512, "range-image columns across the 90 degree camera FOV"),
    "rig.beams": (int, 64, "number of lasers"),
    "rig.elevation_max_deg": (float, 5.0, "elevation of the top laser"),
    "rig.elevation_min_deg": (float, -25.0, "elevation of the bottom laser"),
    "rig.camera_width": (int, 1920, "camera image width in pixels"),
    "rig.camera_height": (int, 640, "camera image height in pixels"),
    "rig.sweep_fov_deg": (float, 90.0, "simulated LiDAR azimuth span, centered forward"),
    "rig.max_range": (float, 120.0, "LiDAR maximum range in meters"),
    "rig.range_noise": (float, 0.0, "std-dev of Gaussian range noise in meters"),
    "net.aux_channels": (_ints, (16, 24, 32), "output channels of the three image ResNet blocks"),
    "net.primary_channels": (_ints, (16, 24, 32, 48), "encoder widths of the primary network"),
    "net.seed": (int, 0, "parameter initialization seed"),
    "train.iterations": (int, 2000, "optimizer steps"),
    "train.batch_size": (int, 4, "frames per step"),
    "train.lr": (float, 0.002, "initial Adam learning rate"),
    "train.lr_decay": (float, 0.99, "learning-rate decay factor"),
    "train.lr_decay_every": (int, 150, "steps between decays"),
    "train.box_weight": (float, 1.0, "weight of the box loss against the focal loss"),
    "train.focal_gamma": (float, 2.0, "focal loss exponent"),
    "train.class_weights": (_floats, (1.0, 1.0, 1.0, 1.0, 1.0, 1.0), "focal loss weight per class"),
    "train.seed": (int, 0, "batch sampling seed"),
    "train.log_every": (int, 50, "steps between training log lines"),
    "eval.conf_threshold": (float, 0.5, "minimum class probability to decode a box"),
    "eval.nms_iou": (float, 0.3, "NMS suppression IoU"),
    "eval.iou_vehicle": (float, 0.7, "AP matching IoU for vehicles"),
    "eval.iou_pedestrian": (float, 0.5, "AP matching IoU for pedestrians"),
    "eval.iou_bike": (float, 0.5, "AP matching IoU for bikes"),
    "eval.merge_bikes": (_bool, True, "merge bicycle and motorcycle into one bike class for AP"),
    "eval.detection": (_bool, True, "compute detection AP (slower) in addition to segmentation"),
    "data.eval_fraction": (float, 0.2, "trailing fraction of dataset frames used for evaluation"),
    "bench.runs": (int, 100, "timed forward passes"),
    "bench.warmup": (int, 5, "untimed forward passes before timing"),
}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v[1] for k, v in OPTIONS.items()})

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}: expected 'key = value', got {raw.strip()!r}", lineno)
            key, value = (p.strip() for p in line.split("=", 1))
            cfg.set(key, value, lineno, source)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        return cls.parse(text, str(p))

    def set(self, key: str, value: str, lineno=None, source="<config>"):
        if key not in OPTIONS:
            raise ConfigError(f"{source}: unknown key {key!r}", lineno)
        try:
            self.values[key] = OPTIONS[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key}: {exc}", lineno) from exc

    def override(self, pairs) -> "RunConfig":
        """Apply ``key=value`` strings (from the command line)."""
        for pair in pairs or ():
            if "=" not in pair:
                raise ConfigError(f"override must be key=value, got {pair!r}")
            k, v = (p.strip() for p in pair.split("=", 1))
            self.set(k, v, source="--set")
        self.validate()
        return self

    def validate(self):
        v = self.values
        if v["rig.camera_width"] % 8 or v["rig.camera_height"] % 8:
            raise ConfigError("camera dimensions must be divisible by 8")
        if v["rig.lidar_width"] % 8 or v["rig.beams"] % 8:
            raise ConfigError("range image dimensions must be divisible by 8")
        if len(v["net.aux_channels"]) != 3:
            raise ConfigError("net.aux_channels needs three values")
        if len(v["net.primary_channels"]) < 2:
            raise ConfigError("net.primary_channels needs at least two values")
        if len(v["train.class_weights"]) != 6:
            raise ConfigError("train.class_weights needs six values")
        if not 0.0 <= v["data.eval_fraction"] < 1.0:
            raise ConfigError("data.eval_fraction must be in [0, 1)")
        if v["train.batch_size"] < 1 or v["train.iterations"] < 0:
            raise ConfigError("train.batch_size must be >= 1 and train.iterations >= 0")

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(self.values[k])}\n" for k in sorted(self.values))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()[:16]

    # ---------------------------------------------------------- builders

    def scene_config(self):
        from .synth import SceneConfig

        return SceneConfig.bands(
            self["scene.near"], self["scene.mid"], self["scene.far"],
            azimuth_limit_deg=self["scene.azimuth_limit_deg"],
            albedo_jitter=self["scene.albedo_jitter"],
        )

    def rig(self):
        from .synth import SensorRig

        table = tuple(np.radians(np.linspace(self["rig.elevation_max_deg"], self["rig.elevation_min_deg"], self["rig.beams"])))
        return SensorRig.default(
            self["rig.camera_width"], self["rig.camera_height"], self["rig.lidar_width"],
            elevation_table=table,
            sweep_fov_deg=self["rig.sweep_fov_deg"],
            max_range=self["rig.max_range"],
            range_noise=self["rig.range_noise"],
        )

    def net_config(self):
        from .nn.model import NetConfig

        return NetConfig(self["net.aux_channels"], self["net.primary_channels"], self["net.seed"])

    def train_config(self):
        from .nn.train import TrainConfig

        return TrainConfig(
            iterations=self["train.iterations"],
            batch_size=self["train.batch_size"],
            lr=self["train.lr"],
            lr_decay=self["train.lr_decay"],
            lr_decay_every=self["train.lr_decay_every"],
            box_weight=self["train.box_weight"],
            focal_gamma=self["train.focal_gamma"],
            class_weights=self["train.class_weights"],
            seed=self["train.seed"],
        )

    def iou_thresholds(self) -> dict:
        return {
            "vehicle": self["eval.iou_vehicle"],
            "pedestrian": self["eval.iou_pedestrian"],
            "bike": self["eval.iou_bike"],
        }


def describe_options() -> str:
    return "".join(f"{k} = {_format(d)}    # {doc}\n" for k, (_, d, doc) in OPTIONS.items())
