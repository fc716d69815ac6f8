"""Bird's-eye-view rectangles and their exact rotated IoU."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def normalize_angle(a: float) -> float:
    """Wrap an angle into ``(-pi, pi]``."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class BoxBEV:
    """Rotated rectangle; ``length`` runs along the heading ``yaw``."""

    x: float
    y: float
    length: float
    width: float
    yaw: float = 0.0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"box dimensions must be positive, got {self.length}x{self.width}")
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def area(self) -> float:
        return self.length * self.width

    @property
    def center_range(self) -> float:
        return math.hypot(self.x, self.y)

    @property
    def radius(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)

    def corners(self) -> np.ndarray:
        """Counter-clockwise ``(4, 2)`` vertices."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for counter-clockwise)."""
    if len(poly) < 3:
        return 0.0
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_polygon(subject, clip):
    """Sutherland-Hodgman: clip ``subject`` by the convex CCW polygon ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, out = out, []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_intersect(prev, cur, sp, sc))
            prev, sp = cur, sc
    return out


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def intersection_area(a: BoxBEV, b: BoxBEV) -> float:
    if math.hypot(a.x - b.x, a.y - b.y) > a.radius + b.radius:
        return 0.0
    # work relative to a's centre so far-away boxes keep full precision
    la = BoxBEV(0.0, 0.0, a.length, a.width, a.yaw)
    lb = BoxBEV(b.x - a.x, b.y - a.y, b.length, b.width, b.yaw)
    poly = clip_polygon(la.corners(), lb.corners())
    return max(0.0, polygon_area(poly))


def rotated_iou(a: BoxBEV, b: BoxBEV) -> float:
    inter = intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.area + b.area - inter
    return min(1.0, max(0.0, inter / union))
