"""Five-channel range-view LiDAR image.

The grid is stored image-style as ``(rows, cols, 5)`` = ``(L, W, 5)``: one row
per laser (row 0 is the highest elevation) and one column per azimuth bin
(column 0 at ``azimuth_min``).  Channels are ``[range, height z, azimuth,
intensity, occupancy]``.  Unoccupied cells are all zeros with
``point_index == -1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, MalformedSweepError, NoOverlapError
from .geometry import CameraCalibration

NUM_CHANNELS = 5
CH_RANGE, CH_HEIGHT, CH_AZIMUTH, CH_INTENSITY, CH_OCCUPANCY = range(NUM_CHANNELS)

TWO_PI = 2.0 * np.pi


@dataclass
class LidarSweep:
    """Raw returns of one revolution. ``theta`` is the sensor-frame azimuth."""

    r: np.ndarray
    e: np.ndarray
    theta: np.ndarray
    laser_id: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        self.r = np.asarray(self.r)
        self.e = np.asarray(self.e)
        self.theta = np.asarray(self.theta)
        self.laser_id = np.asarray(self.laser_id).astype(np.int64, copy=False)
        n = len(self.r)
        if not (len(self.e) == len(self.theta) == len(self.laser_id) == n):
            raise MalformedSweepError("sweep arrays have inconsistent lengths")

    def __len__(self):
        return len(self.r)

    @classmethod
    def empty(cls, timestamp: float = 0.0) -> "LidarSweep":
        z = np.zeros(0)
        return cls(z, z, z, np.zeros(0, dtype=np.int64), timestamp)

    def validate(self, num_lasers: int) -> None:
        if len(self) == 0:
            return
        if np.any(self.laser_id < 0) or np.any(self.laser_id >= num_lasers):
            bad = int(self.laser_id[(self.laser_id < 0) | (self.laser_id >= num_lasers)][0])
            raise MalformedSweepError(f"laser_id {bad} outside 0..{num_lasers - 1}")
        if not np.all(self.r > 0):
            raise MalformedSweepError("non-positive range in sweep")
        if np.any(self.e < 0) or np.any(self.e > 1):
            raise MalformedSweepError("reflectance outside [0, 1]")


@dataclass(frozen=True)
class RangeImageConfig:
    width: int
    elevation_table: tuple
    azimuth_min: float
    azimuth_max: float

    def __post_init__(self):
        table = tuple(float(x) for x in self.elevation_table)
        object.__setattr__(self, "elevation_table", table)
        object.__setattr__(self, "width", int(self.width))
        if self.width <= 0:
            raise ContractError("range image width must be positive")
        if not self.azimuth_min < self.azimuth_max:
            raise ContractError("azimuth_min must be below azimuth_max")
        if self.azimuth_max - self.azimuth_min > TWO_PI + 1e-12:
            raise ContractError("azimuth span exceeds a full revolution")
        d = np.diff(table)
        if len(table) == 0 or not (np.all(d > 0) or np.all(d < 0)):
            raise ContractError("elevation table must be non-empty and strictly monotonic")

    @classmethod
    def default(cls) -> "RangeImageConfig":
        """512 columns over the front 90 degrees, 64 lasers over 30 degrees."""
        return cls(
            width=512,
            elevation_table=tuple(np.radians(np.linspace(5.0, -25.0, 64))),
            azimuth_min=-np.pi / 4,
            azimuth_max=np.pi / 4,
        )

    @property
    def num_lasers(self) -> int:
        return len(self.elevation_table)

    @property
    def height(self) -> int:
        return len(self.elevation_table)

    @property
    def shape(self) -> tuple[int, int]:
        return self.num_lasers, self.width

    @property
    def azimuth_step(self) -> float:
        return (self.azimuth_max - self.azimuth_min) / self.width

    @property
    def laser_rows(self) -> np.ndarray:
        """Row of each laser id: rank by descending elevation."""
        order = np.argsort(-np.asarray(self.elevation_table), kind="stable")
        rows = np.empty(len(order), dtype=np.int64)
        rows[order] = np.arange(len(order))
        return rows

    @property
    def row_elevations(self) -> np.ndarray:
        """Elevation angle of each row."""
        return np.sort(np.asarray(self.elevation_table))[::-1].copy()

    def wrap_azimuth(self, theta) -> np.ndarray:
        """Shift azimuths by multiples of 2*pi into ``[azimuth_min, azimuth_min + 2*pi)``."""
        theta = np.asarray(theta, dtype=np.float64)
        return theta - TWO_PI * np.floor((theta - self.azimuth_min) / TWO_PI)

    def columns(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """Column index for each azimuth, plus mask of azimuths inside the crop."""
        t = self.wrap_azimuth(theta)
        inside = (t >= self.azimuth_min) & (t < self.azimuth_max)
        col = np.floor((t - self.azimuth_min) * self.width / (self.azimuth_max - self.azimuth_min))
        col = np.clip(col, 0, self.width - 1).astype(np.int64)
        return col, inside


@dataclass
class RangeImage:
    grid: np.ndarray
    point_index: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.grid.ndim != 3 or self.grid.shape[2] != NUM_CHANNELS:
            raise ContractError(f"range image grid must be (L, W, 5), got {self.grid.shape}")
        if self.point_index is None:
            self.point_index = np.full(self.grid.shape[:2], -1, dtype=np.int64)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape[0], self.grid.shape[1]

    @property
    def occupied(self) -> np.ndarray:
        return self.grid[..., CH_OCCUPANCY] > 0

    def cell_points(self, cfg: RangeImageConfig) -> np.ndarray:
        """Reconstruct the LiDAR point of every cell as ``(L, W, 3)``; zeros where empty."""
        from .geometry import spherical_to_cartesian

        if self.shape != cfg.shape:
            raise ContractError(f"range image {self.shape} does not match config {cfg.shape}")
        g = self.grid.astype(np.float64)
        phi = cfg.row_elevations[:, None]
        pts = spherical_to_cartesian(g[..., CH_RANGE], g[..., CH_AZIMUTH], phi)
        pts[~self.occupied] = 0.0
        return pts


def build_range_image(sweep: LidarSweep, cfg: RangeImageConfig) -> RangeImage:
    """Rasterize a sweep into the range view; the closest return wins each cell.

    Ties on range are broken by azimuth then reflectance, so the grid does not
    depend on the order of the returns.
    """
    sweep.validate(cfg.num_lasers)
    L, W = cfg.shape
    grid = np.zeros((L, W, NUM_CHANNELS), dtype=np.float64)
    index = np.full((L, W), -1, dtype=np.int64)
    if len(sweep) == 0:
        return RangeImage(grid, index)

    r = sweep.r.astype(np.float64)
    theta = sweep.theta.astype(np.float64)
    e = sweep.e.astype(np.float64)
    col, inside = cfg.columns(theta)
    row = cfg.laser_rows[sweep.laser_id]
    src = np.flatnonzero(inside)
    if len(src) == 0:
        return RangeImage(grid, index)

    cell = row[src] * W + col[src]
    order = np.lexsort((e[src], theta[src], r[src], cell))
    cell_sorted = cell[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = cell_sorted[1:] != cell_sorted[:-1]
    winners = src[order[first]]
    win_cells = cell_sorted[first]

    rr, cc = np.divmod(win_cells, W)
    phi = np.asarray(cfg.elevation_table)[sweep.laser_id[winners]]
    grid[rr, cc, CH_RANGE] = r[winners]
    grid[rr, cc, CH_HEIGHT] = r[winners] * np.sin(phi)
    grid[rr, cc, CH_AZIMUTH] = theta[winners]
    grid[rr, cc, CH_INTENSITY] = e[winners]
    grid[rr, cc, CH_OCCUPANCY] = 1.0
    index[rr, cc] = winners
    return RangeImage(grid, index)


def crop_to_camera_fov(cfg: RangeImageConfig, cal: CameraCalibration, width: int | None = None) -> RangeImageConfig:
    """Intersect the config's azimuth range with the camera's horizontal FOV.

    The angular resolution is kept: the new width is the cropped span divided
    by the old bin size, rounded.  Pass ``width`` to override.
    """
    cam_lo, cam_hi = cal.azimuth_bounds()
    lo = max(cfg.azimuth_min, cam_lo)
    hi = min(cfg.azimuth_max, cam_hi)
    if not lo < hi:
        raise NoOverlapError(
            f"camera azimuths [{cam_lo:.4f}, {cam_hi:.4f}] do not overlap "
            f"LiDAR azimuths [{cfg.azimuth_min:.4f}, {cfg.azimuth_max:.4f}]"
        )
    if width is None:
        width = max(1, int(round((hi - lo) / cfg.azimuth_step)))
    return RangeImageConfig(width, cfg.elevation_table, lo, hi)
