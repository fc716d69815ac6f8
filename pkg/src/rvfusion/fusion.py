"""LiDAR-cell to camera-pixel mapping and the feature warp with its adjoint.

A :class:`PixelMapping` keeps the continuous projected coordinates of every
occupied cell and the integer pixels obtained by dividing them by the feature
scale and rounding (ties away from zero).  Rounding always starts from the
continuous coordinate, so ``rescale(rescale(m, 2), 4)`` and ``rescale(m, 8)``
agree.

The warp is a row gather: cell ``(i, j)`` with pixel ``(u, v)`` receives the
feature vector ``f[v, u, :]``.  Its adjoint scatter-adds range-view gradients
back onto those pixels.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError
from .geometry import CameraCalibration, project_to_camera, round_half_away
from .rangeimage import RangeImage, RangeImageConfig


@dataclass(frozen=True)
class PixelMapping:
    """Per-cell pixel correspondences at a given feature scale.

    ``coords``: ``(L, W, 2)`` continuous full-resolution ``(u, v)``, NaN where
    absent.  ``pixels``: ``(L, W, 2)`` integer ``(u, v)`` at ``scale``; -1 where
    absent.  ``bounds``: ``(width, height)`` of the feature map at ``scale``.
    """

    coords: np.ndarray
    pixels: np.ndarray
    valid: np.ndarray
    scale: tuple
    bounds: tuple

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def flat_index(self) -> np.ndarray:
        """Row-major pixel index ``v * width + u`` per cell, -1 where absent."""
        w = self.bounds[0]
        idx = self.pixels[..., 1] * w + self.pixels[..., 0]
        return np.where(self.valid, idx, -1)

    def empty_like(self) -> "PixelMapping":
        """Same geometry with every entry absent (LiDAR-only operation)."""
        return replace(
            self,
            coords=np.full_like(self.coords, np.nan),
            pixels=np.full_like(self.pixels, -1),
            valid=np.zeros_like(self.valid),
        )

    @classmethod
    def absent(cls, shape, bounds, scale=(1.0, 1.0)) -> "PixelMapping":
        L, W = shape
        return cls(
            coords=np.full((L, W, 2), np.nan),
            pixels=np.full((L, W, 2), -1, dtype=np.int64),
            valid=np.zeros((L, W), dtype=bool),
            scale=(float(scale[0]), float(scale[1])),
            bounds=(int(bounds[0]), int(bounds[1])),
        )


def _discretize(coords, valid, scale, bounds):
    su, sv = scale
    u = round_half_away(np.where(valid, coords[..., 0], 0.0) / su)
    v = round_half_away(np.where(valid, coords[..., 1], 0.0) / sv)
    ok = valid & (u >= 0) & (u < bounds[0]) & (v >= 0) & (v < bounds[1])
    pixels = np.stack([u, v], axis=-1).astype(np.int64)
    pixels[~ok] = -1
    return pixels, ok


def compute_pixel_mapping(img: RangeImage, cfg: RangeImageConfig, cal: CameraCalibration) -> PixelMapping:
    """Project every occupied cell's point into the full-resolution image."""
    pts = img.cell_points(cfg)
    occ = img.occupied
    uv, _, valid = project_to_camera(pts, cal)
    valid &= occ
    coords = np.where(valid[..., None], uv, np.nan)
    bounds = (cal.image_width, cal.image_height)
    pixels, ok = _discretize(coords, valid, (1.0, 1.0), bounds)
    coords[~ok] = np.nan
    return PixelMapping(coords, pixels, ok, (1.0, 1.0), bounds)


def rescale_mapping(m: PixelMapping, s_x: float, s_y: float) -> PixelMapping:
    """Divide pixel coordinates by an extra ``(s_x, s_y)`` and re-round.

    Bounds shrink to ``floor(bound / s)``; entries that round outside become
    absent instead of being clamped.
    """
    if not (s_x >= 1 and s_y >= 1):
        raise ContractError(f"rescale factors must be >= 1, got ({s_x}, {s_y})")
    scale = (m.scale[0] * s_x, m.scale[1] * s_y)
    bounds = (int(np.floor(m.bounds[0] / s_x)), int(np.floor(m.bounds[1] / s_y)))
    if s_x == 1 and s_y == 1:
        return replace(m, scale=scale, bounds=bounds)
    pixels, ok = _discretize(m.coords, m.valid, scale, bounds)
    return PixelMapping(np.where(ok[..., None], m.coords, np.nan), pixels, ok, scale, bounds)


@dataclass
class FeatureMap:
    """``(H, W, C)`` features; ``scale`` is relative to the source image."""

    data: np.ndarray
    scale: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ContractError(f"feature map must be (H, W, C), got {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def _check_scale(f: FeatureMap, m: PixelMapping):
    if tuple(map(float, f.scale)) != tuple(map(float, m.scale)):
        raise ContractError(f"feature scale {f.scale} does not match mapping scale {m.scale}")
    if (f.width, f.height) != tuple(m.bounds):
        raise ContractError(
            f"feature map is {f.width}x{f.height} but mapping bounds are {m.bounds[0]}x{m.bounds[1]}"
        )


def warp_features(f: FeatureMap, m: PixelMapping) -> FeatureMap:
    """Gather camera features into the range view; absent cells get zeros."""
    _check_scale(f, m)
    L, W = m.shape
    rows = f.data.reshape(-1, f.channels)
    idx = m.flat_index().reshape(-1)
    out = np.zeros((L * W, f.channels), dtype=f.data.dtype)
    hit = idx >= 0
    out[hit] = rows[idx[hit]]
    return FeatureMap(out.reshape(L, W, f.channels), scale=(1.0, 1.0))


def warp_backward(grad_out: FeatureMap, m: PixelMapping, camera_shape) -> FeatureMap:
    """Adjoint of :func:`warp_features`.

    ``camera_shape`` is the ``(H, W, C)`` of the forward input.  Pixels hit by
    ``k`` cells accumulate ``k`` gradient rows.  ``np.add.at`` is unbuffered and
    sequential, so the sum order is fixed by cell order.
    """
    H, Wf, C = camera_shape
    L, W = m.shape
    if grad_out.data.shape != (L, W, C):
        raise ContractError(f"gradient shape {grad_out.data.shape} != range view {(L, W, C)}")
    if (Wf, H) != tuple(m.bounds):
        raise ContractError(f"camera shape {(H, Wf)} does not match mapping bounds {m.bounds}")
    idx = m.flat_index().reshape(-1)
    hit = idx >= 0
    out = np.zeros((H * Wf, C), dtype=grad_out.data.dtype)
    np.add.at(out, idx[hit], grad_out.data.reshape(-1, C)[hit])
    return FeatureMap(out.reshape(H, Wf, C), scale=m.scale)
