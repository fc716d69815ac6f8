"""Deterministic synthetic scenes, a raycast 64-beam LiDAR and a flat-shaded camera.

The scene lives in the LiDAR frame: the sensor is at the origin and the
ground is the plane ``z = ground_z`` (minus the mount height).  Objects are
yawed cuboids standing on the ground.

Object classes get distinct hues but a shared brightness distribution.  The
LiDAR reflectance of a surface is the mean of its RGB albedo, so intensity
carries no class information while the camera image does.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .classes import SemanticClass
from .errors import SceneConfigError
from .geometry import CameraCalibration, forward_camera, spherical_to_cartesian
from .rangeimage import LidarSweep, RangeImageConfig, crop_to_camera_fov

MAX_PLACEMENT_ATTEMPTS = 10_000

# (length, width, height) ranges in meters.
CLASS_DIMS = {
    SemanticClass.VEHICLE: ((3.9, 4.7), (1.7, 2.0), (1.4, 1.7)),
    SemanticClass.PEDESTRIAN: ((0.5, 0.8), (0.5, 0.8), (1.65, 1.95)),
    SemanticClass.BICYCLE: ((1.6, 1.85), (0.5, 0.65), (0.95, 1.1)),
    SemanticClass.MOTORCYCLE: ((1.95, 2.25), (0.7, 0.85), (1.2, 1.35)),
}

# Base hues, rescaled per object to a common brightness.
CLASS_HUES = {
    SemanticClass.VEHICLE: (0.25, 0.45, 1.0),
    SemanticClass.PEDESTRIAN: (1.0, 0.25, 0.2),
    SemanticClass.BICYCLE: (0.3, 1.0, 0.3),
    SemanticClass.MOTORCYCLE: (1.0, 0.3, 1.0),
}

ROAD_ALBEDO = (0.14, 0.14, 0.15)
GROUND_ALBEDO = (0.55, 0.5, 0.42)
SKY_COLOR = (0.75, 0.85, 0.97)


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    length: float
    width: float
    height: float
    yaw: float

    @property
    def half_extents(self) -> np.ndarray:
        return 0.5 * np.array([self.length, self.width, self.height])

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def bev_radius(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)

    def to_local(self, p: np.ndarray) -> np.ndarray:
        """World points ``(..., 3)`` into the box frame (axis-aligned, centered)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        d = np.asarray(p, dtype=np.float64) - self.center
        return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1], d[..., 2]], axis=-1)

    def surface_distance(self, p: np.ndarray) -> np.ndarray:
        """Unsigned distance of points to the box surface."""
        q = np.abs(self.to_local(p)) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return np.abs(outside + inside)

    def contains(self, p: np.ndarray, tol: float = 0.0) -> np.ndarray:
        q = np.abs(self.to_local(p)) - self.half_extents
        return np.all(q <= tol, axis=-1)


@dataclass
class SceneObject:
    box: Box3D
    cls: SemanticClass
    albedo: tuple
    object_id: int

    @property
    def reflectance(self) -> float:
        return float(np.clip(np.mean(self.albedo), 0.0, 1.0))


@dataclass
class Scene:
    objects: list
    road: np.ndarray  # (N, 2) polygon on the ground plane
    ground_z: float
    seed: int
    ground_albedo: tuple = GROUND_ALBEDO
    road_albedo: tuple = ROAD_ALBEDO


@dataclass(frozen=True)
class ObjectRequest:
    cls: SemanticClass
    count: int
    band: tuple  # (min range, max range) of the BEV center, meters


@dataclass(frozen=True)
class SceneConfig:
    requests: tuple = ()
    azimuth_limit_deg: float = 40.0
    mount_height: float = 1.8
    separation: float = 0.5
    brightness: tuple = (0.3, 0.5)
    albedo_jitter: float = 0.06
    road_width: tuple = (6.0, 10.0)

    @classmethod
    def bands(cls, near: int = 3, mid: int = 3, far: int = 4, **kw) -> "SceneConfig":
        """Objects of random class in the 0-30, 30-50 and 50-70 m bands.

        Classes are drawn per object at generation time; the request list
        stores one entry per band with ``cls=None``.
        """
        reqs = (
            ObjectRequest(None, near, (5.0, 30.0)),
            ObjectRequest(None, mid, (30.0, 50.0)),
            ObjectRequest(None, far, (50.0, 70.0)),
        )
        return cls(requests=tuple(r for r in reqs if r.count), **kw)


def _object_albedo(rng, cls, cfg: SceneConfig):
    hue = np.asarray(CLASS_HUES[cls], dtype=np.float64)
    hue = hue / hue.mean()
    bright = rng.uniform(*cfg.brightness)
    col = hue * bright + rng.normal(0.0, cfg.albedo_jitter, 3)
    return tuple(float(c) for c in np.clip(col, 0.0, 1.0))


def generate_scene(cfg: SceneConfig, seed: int) -> Scene:
    """Place the requested objects by rejection sampling (no BEV overlap)."""
    rng = np.random.default_rng(seed)
    ground_z = -cfg.mount_height
    heading = rng.uniform(-0.15, 0.15)
    offset = rng.uniform(-4.0, 4.0)
    half_w = 0.5 * rng.uniform(*cfg.road_width)
    c, s = math.cos(heading), math.sin(heading)
    along = np.array([c, s])
    across = np.array([-s, c])
    base = offset * across
    road = np.array([
        base - 20.0 * along - half_w * across,
        base + 200.0 * along - half_w * across,
        base + 200.0 * along + half_w * across,
        base - 20.0 * along + half_w * across,
    ])

    classes = list(CLASS_DIMS)
    objects: list[SceneObject] = []
    az_lim = math.radians(cfg.azimuth_limit_deg)
    for req in cfg.requests:
        lo, hi = req.band
        for _ in range(req.count):
            cls = req.cls if req.cls is not None else classes[rng.integers(len(classes))]
            (l0, l1), (w0, w1), (h0, h1) = CLASS_DIMS[SemanticClass(cls)]
            for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
                d = rng.uniform(lo, hi)
                az = rng.uniform(-az_lim, az_lim)
                length, width, height = rng.uniform(l0, l1), rng.uniform(w0, w1), rng.uniform(h0, h1)
                box = Box3D(
                    d * math.cos(az), d * math.sin(az), ground_z + 0.5 * height,
                    length, width, height, rng.uniform(-math.pi, math.pi),
                )
                if d < box.bev_radius + 2.0:
                    continue
                if all(
                    math.hypot(box.x - o.box.x, box.y - o.box.y) >= box.bev_radius + o.box.bev_radius + cfg.separation
                    for o in objects
                ):
                    break
            else:
                raise SceneConfigError(
                    f"could not place {SemanticClass(cls).name.lower()} in band {req.band} "
                    f"after {MAX_PLACEMENT_ATTEMPTS} attempts"
                )
            objects.append(SceneObject(box, SemanticClass(cls), _object_albedo(rng, SemanticClass(cls), cfg), len(objects)))
    return Scene(objects, road, ground_z, int(seed))


@dataclass(frozen=True)
class SensorRig:
    """64-beam LiDAR at the origin plus one forward camera.

    ``azimuth_steps`` firings per revolution at bin centers; only firings
    inside ``sweep_fov_deg`` (centered forward) are simulated.
    """

    camera: CameraCalibration
    elevation_table: tuple = tuple(np.radians(np.linspace(5.0, -25.0, 64)))
    azimuth_steps: int = 2048
    sweep_fov_deg: float = 360.0
    max_range: float = 120.0
    range_noise: float = 0.0

    @classmethod
    def default(cls, camera_width=1920, camera_height=640, lidar_width=512, **kw) -> "SensorRig":
        """Camera covering the front 90 degrees, ``lidar_width`` columns across it."""
        table = kw.pop("elevation_table", tuple(np.radians(np.linspace(5.0, -25.0, 64))))
        mid = 0.5 * (np.degrees(max(table)) + np.degrees(min(table)))
        cam = forward_camera(
            camera_width, camera_height, hfov_deg=90.0, center_elevation_deg=mid, center=(0.1, 0.0, 0.0)
        )
        return cls(camera=cam, elevation_table=table, azimuth_steps=4 * lidar_width, **kw)

    def full_config(self) -> RangeImageConfig:
        return RangeImageConfig(self.azimuth_steps, self.elevation_table, -math.pi, math.pi)

    def range_config(self) -> RangeImageConfig:
        """Full-revolution config cropped to the camera FOV."""
        return crop_to_camera_fov(self.full_config(), self.camera)

    def firing_azimuths(self) -> np.ndarray:
        k = np.arange(self.azimuth_steps)
        theta = -math.pi + (k + 0.5) * (2.0 * math.pi / self.azimuth_steps)
        half = math.radians(self.sweep_fov_deg) / 2.0
        return theta[np.abs(theta) <= half]


@dataclass
class RaycastResult:
    sweep: LidarSweep
    labels: np.ndarray  # semantic class per return
    object_ids: np.ndarray  # -1 for ground


def _point_in_polygon(xy: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule, vectorized over points."""
    x, y = xy[..., 0], xy[..., 1]
    inside = np.zeros(x.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xi)
    return inside


def _ray_box(origin: np.ndarray, dirs: np.ndarray, box: Box3D) -> np.ndarray:
    """Entry distance of each ray into ``box`` (inf on miss), slab method."""
    o = box.to_local(origin)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    d = np.stack([c * dirs[:, 0] + s * dirs[:, 1], -s * dirs[:, 0] + c * dirs[:, 1], dirs[:, 2]], axis=-1)
    h = box.half_extents
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-h - o) / d
        t2 = (h - o) / d
    tmin = np.max(np.minimum(t1, t2), axis=1)
    tmax = np.min(np.maximum(t1, t2), axis=1)
    hit = (tmax >= tmin) & (tmin > 1e-9)
    return np.where(hit, tmin, np.inf)


def cast_rays(scene: Scene, origin, dirs: np.ndarray):
    """Nearest hit per ray.

    Returns ``(t, hit_object, on_road)``: distance (inf on miss), index into
    ``scene.objects`` or -1 for ground/miss, and road membership of ground hits.
    """
    origin = np.asarray(origin, dtype=np.float64)
    n = len(dirs)
    t = np.full(n, np.inf)
    with np.errstate(divide="ignore"):
        tg = (scene.ground_z - origin[2]) / dirs[:, 2]
    ground = (dirs[:, 2] < 0) & (tg > 0)
    t[ground] = tg[ground]
    obj = np.full(n, -1, dtype=np.int64)
    for k, o in enumerate(scene.objects):
        tk = _ray_box(origin, dirs, o.box)
        closer = tk < t
        t[closer] = tk[closer]
        obj[closer] = k
    hit_ground = np.isfinite(t) & (obj < 0)
    on_road = np.zeros(n, dtype=bool)
    if np.any(hit_ground):
        pts = origin[:2] + dirs[hit_ground, :2] * t[hit_ground, None]
        on_road[hit_ground] = _point_in_polygon(pts, scene.road)
    return t, obj, on_road


def raycast_lidar(scene: Scene, rig: SensorRig, timestamp: float = 0.0) -> RaycastResult:
    theta = rig.firing_azimuths()
    phi = np.asarray(rig.elevation_table)
    lasers, th = np.meshgrid(np.arange(len(phi)), theta, indexing="ij")
    lasers, th = lasers.ravel(), th.ravel()
    dirs = spherical_to_cartesian(1.0, th, phi[lasers])
    t, obj, on_road = cast_rays(scene, np.zeros(3), dirs)
    keep = np.isfinite(t) & (t <= rig.max_range)
    t, obj, on_road = t[keep], obj[keep], on_road[keep]
    if rig.range_noise > 0:
        rng = np.random.default_rng(scene.seed + 7919)
        t = np.maximum(t + rng.normal(0.0, rig.range_noise, t.shape), 1e-3)

    refl_obj = np.array([o.reflectance for o in scene.objects] + [0.0])
    labels = np.where(on_road, int(SemanticClass.ROAD), int(SemanticClass.BACKGROUND))
    e = np.where(on_road, float(np.mean(scene.road_albedo)), float(np.mean(scene.ground_albedo)))
    is_obj = obj >= 0
    cls_obj = np.array([int(o.cls) for o in scene.objects] + [0], dtype=np.int64)
    labels = np.where(is_obj, cls_obj[obj], labels)
    e = np.where(is_obj, refl_obj[obj], e)
    sweep = LidarSweep(t, e, th[keep], lasers[keep], timestamp)
    ids = np.array([o.object_id for o in scene.objects] + [-1], dtype=np.int64)
    return RaycastResult(sweep, labels.astype(np.int64), np.where(is_obj, ids[obj], -1))


def render_camera(scene: Scene, rig: SensorRig) -> np.ndarray:
    """``(H, W, 3)`` float32 image; pixel ``(j, i)`` samples the ray through ``(u=i, v=j)``."""
    cal = rig.camera
    v, u = np.meshgrid(np.arange(cal.image_height, dtype=np.float64), np.arange(cal.image_width, dtype=np.float64), indexing="ij")
    dirs = cal.pixel_rays(u.ravel(), v.ravel())
    t, obj, on_road = cast_rays(scene, cal.center, dirs)
    palette = np.array([o.albedo for o in scene.objects] + [SKY_COLOR], dtype=np.float64)
    img = np.where(np.isfinite(t)[:, None], np.array(scene.ground_albedo), np.array(SKY_COLOR))
    img[on_road] = scene.road_albedo
    img[obj >= 0] = palette[obj[obj >= 0]]
    return img.reshape(cal.image_height, cal.image_width, 3).astype(np.float32)
