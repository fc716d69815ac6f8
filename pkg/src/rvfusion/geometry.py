"""Coordinate conversions and the pinhole camera model.

Conventions
-----------
LiDAR (sensor) frame: x forward, y left, z up.  Azimuth ``theta`` is measured
in this sensor frame with ``atan2(y, x)``, so ``theta`` lies in ``(-pi, pi]``.
Elevation ``phi`` is the angle above the xy-plane and must stay strictly
inside ``(-pi/2, pi/2)``; the poles have no defined azimuth.

Camera frame: x right, y down, z forward (optical axis).  A point ``p`` in the
LiDAR frame projects through ``alpha * [u, v, 1]^T = K (R p + t)``.  Continuous
pixel coordinates put the center of pixel column ``i`` at ``u = i``.

Everything here runs in float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import CalibrationError, GeometryError

HALF_PI = 0.5 * np.pi


class Point3(NamedTuple):
    x: float
    y: float
    z: float


class SphericalCoord(NamedTuple):
    r: float
    theta: float
    phi: float

    def validate(self) -> "SphericalCoord":
        if not (self.r > 0 and np.isfinite(self.r)):
            raise GeometryError(f"range must be positive and finite, got {self.r}")
        if not (-HALF_PI < self.phi < HALF_PI):
            raise GeometryError(f"elevation {self.phi} outside (-pi/2, pi/2)")
        if not (-np.pi < self.theta <= np.pi):
            raise GeometryError(f"azimuth {self.theta} outside (-pi, pi]")
        return self


class PixelCoord(NamedTuple):
    u: float
    v: float


def spherical_to_cartesian(r, theta, phi) -> np.ndarray:
    """Range/azimuth/elevation to xyz. Broadcasts; returns shape ``(..., 3)``."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    cos_phi = np.cos(phi)
    return np.stack(
        np.broadcast_arrays(r * cos_phi * np.cos(theta), r * cos_phi * np.sin(theta), r * np.sin(phi)),
        axis=-1,
    )


def cartesian_to_spherical(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact inverse of :func:`spherical_to_cartesian`.

    Raises :class:`GeometryError` for zero-norm points and for points on the
    z axis (elevation +-pi/2, azimuth undefined).
    """
    p = np.asarray(points, dtype=np.float64)
    if p.shape[-1] != 3:
        raise GeometryError(f"expected trailing dimension 3, got shape {p.shape}")
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    horiz = np.hypot(x, y)
    r = np.sqrt(horiz * horiz + z * z)
    if np.any(r == 0):
        raise GeometryError("zero-norm point has no spherical coordinates")
    if np.any(horiz == 0):
        raise GeometryError("point on the z axis: elevation is +-pi/2 (pole excluded)")
    theta = np.arctan2(y, x)
    phi = np.arctan2(z, horiz)
    return r, theta, phi


@dataclass(frozen=True)
class CameraCalibration:
    """Intrinsics ``K`` plus the LiDAR-to-camera extrinsics ``(R, t)``."""

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        K = np.array(self.K, dtype=np.float64).reshape(3, 3)
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        for arr in (K, R, t):
            arr.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise CalibrationError("calibration contains non-finite values")
        check_rotation(R)
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise CalibrationError(f"focal lengths must be positive, got fx={K[0, 0]}, fy={K[1, 1]}")
        if not np.array_equal(K[2], [0.0, 0.0, 1.0]) or K[1, 0] != 0.0:
            raise CalibrationError("K must be upper triangular with K[2] = (0, 0, 1)")
        if int(self.image_width) <= 0 or int(self.image_height) <= 0:
            raise CalibrationError("image dimensions must be positive")
        object.__setattr__(self, "image_width", int(self.image_width))
        object.__setattr__(self, "image_height", int(self.image_height))

    @classmethod
    def from_intrinsics(cls, fx, fy, cx, cy, image_width, image_height, R=None, t=None):
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        return cls(
            K=K,
            R=np.eye(3) if R is None else R,
            t=np.zeros(3) if t is None else t,
            image_width=image_width,
            image_height=image_height,
        )

    @property
    def center(self) -> np.ndarray:
        """Camera optical center in the LiDAR frame."""
        return -self.R.T @ self.t

    def pixel_rays(self, u, v) -> np.ndarray:
        """Unnormalized LiDAR-frame ray directions through continuous pixels."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        pix = np.stack(np.broadcast_arrays(u, v, np.ones_like(u)), axis=-1)
        cam = np.linalg.solve(self.K, pix.reshape(-1, 3).T).T
        return (cam @ self.R).reshape(pix.shape)

    def azimuth_bounds(self) -> tuple[float, float]:
        """Horizontal FOV of the camera as LiDAR-frame azimuths ``(lo, hi)``.

        Uses the rays through the image edges ``u = 0`` and ``u = W`` (the valid
        continuous range of :func:`project_to_camera`) on the principal row.
        Translation is ignored (directions only).
        """
        cy = self.K[1, 2]
        rays = self.pixel_rays([0.0, float(self.image_width)], [cy, cy])
        az = np.arctan2(rays[:, 1], rays[:, 0])
        lo, hi = float(min(az)), float(max(az))
        return lo, hi


def check_rotation(R, tol: float = 1e-9) -> None:
    """Raise :class:`CalibrationError` unless ``R`` is a proper rotation."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise CalibrationError(f"rotation must be 3x3, got {R.shape}")
    if np.max(np.abs(R @ R.T - np.eye(3))) > tol:
        raise CalibrationError("rotation matrix is not orthonormal")
    det = np.linalg.det(R)
    if abs(det - 1.0) > tol:
        raise CalibrationError(f"rotation determinant is {det:.12f}, expected +1")


def project_to_camera(points, cal: CameraCalibration) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project LiDAR-frame points into the image.

    Returns ``(uv, alpha, valid)``: continuous pixel coordinates ``(..., 2)``,
    projective depth and a mask that is true iff ``alpha > 0`` and
    ``0 <= u < W`` and ``0 <= v < H``.  Invalid entries of ``uv`` are NaN.
    """
    p = np.asarray(points, dtype=np.float64)
    cam = p @ cal.R.T + cal.t
    hom = cam @ cal.K.T
    alpha = hom[..., 2]
    front = alpha > 0
    safe = np.where(front, alpha, 1.0)
    u = hom[..., 0] / safe
    v = hom[..., 1] / safe
    valid = front & (u >= 0) & (u < cal.image_width) & (v >= 0) & (v < cal.image_height)
    uv = np.stack([u, v], axis=-1)
    uv[~valid] = np.nan
    return uv, alpha, valid


def project_point(p, cal: CameraCalibration) -> Optional[PixelCoord]:
    """Scalar form of :func:`project_to_camera`; ``None`` when out of frustum."""
    uv, _, valid = project_to_camera(np.asarray(p, dtype=np.float64).reshape(1, 3), cal)
    if not valid[0]:
        return None
    return PixelCoord(float(uv[0, 0]), float(uv[0, 1]))


def round_half_away(x) -> np.ndarray:
    """Round to nearest integer, ties away from zero. Exact for all doubles."""
    x = np.asarray(x, dtype=np.float64)
    mag = np.abs(x)
    base = np.floor(mag)
    out = base + (mag - base >= 0.5)
    return np.copysign(out, x)


def rotation_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# LiDAR (x fwd, y left, z up) -> camera (x right, y down, z fwd)
LIDAR_TO_CAMERA_AXES = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def forward_camera(
    image_width: int,
    image_height: int,
    hfov_deg: float = 90.0,
    center_elevation_deg: float = 0.0,
    center=(0.0, 0.0, 0.0),
) -> CameraCalibration:
    """Forward-looking camera with square pixels and a level optical axis.

    The principal point is horizontally centered, so the azimuth span is exactly
    ``hfov_deg``.  It is shifted vertically so that ``center_elevation_deg``
    lands on the middle image row.  ``center`` is the optical center in LiDAR
    coordinates.
    """
    fx = 0.5 * image_width / np.tan(np.radians(hfov_deg) / 2.0)
    cy = 0.5 * image_height + fx * np.tan(np.radians(center_elevation_deg))
    R = LIDAR_TO_CAMERA_AXES
    t = -R @ np.asarray(center, dtype=np.float64)
    return CameraCalibration.from_intrinsics(
        fx, fx, 0.5 * image_width, cy, image_width, image_height, R=R, t=t
    )
