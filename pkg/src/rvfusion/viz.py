"""Debug renders: point overlays, range-image channels, class maps."""
from __future__ import annotations

import numpy as np

from .classes import NUM_CLASSES
from .fusion import compute_pixel_mapping
from .rangeimage import CH_OCCUPANCY, CH_RANGE

# background, road, vehicle, pedestrian, bicycle, motorcycle
CLASS_COLORS = np.array(
    [
        [0.35, 0.35, 0.35],
        [0.55, 0.2, 0.55],
        [0.1, 0.45, 1.0],
        [1.0, 0.15, 0.1],
        [0.1, 0.9, 0.2],
        [1.0, 0.85, 0.0],
    ]
)
UNOCCUPIED_COLOR = np.zeros(3)


def _range_colors(r, max_range=70.0):
    t = np.clip(np.asarray(r, dtype=np.float64) / max_range, 0.0, 1.0)[..., None]
    near = np.array([1.0, 1.0, 0.1])
    far = np.array([0.1, 0.2, 1.0])
    return (1.0 - t) * near + t * far


def projected_points(frame, img=None):
    """``(u, v, cell_row, cell_col)`` integer arrays for cells that project."""
    from .data import range_image64

    img = range_image64(frame) if img is None else img
    m = compute_pixel_mapping(img, frame.range_config, frame.calibration)
    rows, cols = np.nonzero(m.valid)
    return m.pixels[rows, cols, 0], m.pixels[rows, cols, 1], rows, cols


def camera_overlay(frame, colors=None, radius: int = 0) -> np.ndarray:
    """Camera image with each projecting cell drawn in a range color, or
    ``colors[(row, col)]`` when given as an ``(L, W, 3)`` array."""
    out = np.array(frame.camera, dtype=np.float64, copy=True)
    u, v, rows, cols = projected_points(frame)
    if colors is None:
        c = _range_colors(frame.range_image.grid[rows, cols, CH_RANGE])
    else:
        c = np.asarray(colors)[rows, cols]
    H, W = out.shape[:2]
    for du in range(-radius, radius + 1):
        for dv in range(-radius, radius + 1):
            uu, vv = u + du, v + dv
            ok = (uu >= 0) & (uu < W) & (vv >= 0) & (vv < H)
            out[vv[ok], uu[ok]] = c[ok]
    return out


def range_render(frame, max_range: float = 70.0, scale: int = 1) -> np.ndarray:
    """Range channel as an ``(L * scale, W)`` grayscale image: near is bright,
    far and unoccupied are dark."""
    g = frame.range_image.grid.astype(np.float64)
    img = np.where(g[..., CH_OCCUPANCY] > 0, 1.0 - 0.8 * np.clip(g[..., CH_RANGE] / max_range, 0.0, 1.0), 0.0)
    return np.repeat(img, scale, axis=0)


def class_map(labels: np.ndarray, scale: int = 1) -> np.ndarray:
    """``(L, W)`` class ids (-1 for empty) to colors."""
    lab = np.asarray(labels)
    img = np.where((lab >= 0)[..., None], CLASS_COLORS[np.clip(lab, 0, NUM_CLASSES - 1)], UNOCCUPIED_COLOR)
    return np.repeat(img, scale, axis=0)


def confusion_image(conf: np.ndarray, cell: int = 24) -> np.ndarray:
    """Row-normalized confusion matrix as a grayscale grid (rows = truth)."""
    conf = np.asarray(conf, dtype=np.float64)
    totals = conf.sum(axis=1, keepdims=True)
    frac = np.divide(conf, totals, out=np.zeros_like(conf), where=totals > 0)
    img = np.kron(frac, np.ones((cell, cell)))
    img[::cell, :] = 0.5
    img[:, ::cell] = 0.5
    return img
