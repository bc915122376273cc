"""Grid geometry shared by every module.

All grids use the pixel-center inclusion rule: a pixel belongs to a shape
iff its center lies inside (boundary included). Ego frame: +y forward,
+x to the right, origin at the ego center.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-9


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    a = np.where(a == -np.pi, np.pi, a)
    return float(a) if a.ndim == 0 else a


@dataclass(frozen=True)
class CriticalRegion:
    """Ego-centric pixel box ``l <= x <= p``, ``m <= y <= k`` (inclusive)."""

    l: int = -250
    p: int = 250
    m: int = -100
    k: int = 400
    resolution: float = 0.1

    def __post_init__(self):
        if not (self.l < self.p and self.m < self.k):
            raise ValueError("need l < p and m < k")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @classmethod
    def full_scale(cls) -> "CriticalRegion":
        return cls(-250, 250, -100, 400, 0.1)

    @classmethod
    def desk(cls) -> "CriticalRegion":
        # 100 x 100 at 0.5 m/px: 25 m per side, 40 m ahead, 10 m behind
        return cls(-50, 49, -20, 79, 0.5)

    @property
    def h(self) -> int:
        return self.k - self.m + 1

    @property
    def w(self) -> int:
        return self.p - self.l + 1

    @property
    def shape(self) -> tuple[int, int]:
        return (self.h, self.w)

    def extent_m(self):
        """Metric rectangle covered by the pixels: (xmin, xmax, ymin, ymax)."""
        r = self.resolution
        return ((self.l - 0.5) * r, (self.p + 0.5) * r,
                (self.m - 0.5) * r, (self.k + 0.5) * r)

    def pixel_centers(self):
        """Ego-frame metric coordinates (X, Y) of all pixel centers, each h x w."""
        cols = np.arange(self.w)
        rows = np.arange(self.h)
        x = (cols + self.l) * self.resolution
        y = (self.k - rows) * self.resolution
        return np.meshgrid(x, y)

    def to_pixel(self, x, y):
        """Ego-frame meters to (row, col), rounded to the nearest pixel center."""
        col = np.rint(np.asarray(x) / self.resolution).astype(int) - self.l
        row = self.k - np.rint(np.asarray(y) / self.resolution).astype(int)
        return row, col

    def to_dict(self):
        return {"l": self.l, "p": self.p, "m": self.m, "k": self.k,
                "resolution": self.resolution}


def to_ego_frame(x, y, anchor_x, anchor_y, anchor_yaw):
    """World points into the frame where the anchor heading points to +y."""
    a = np.pi / 2 - anchor_yaw
    c, s = np.cos(a), np.sin(a)
    dx = np.asarray(x, dtype=float) - anchor_x
    dy = np.asarray(y, dtype=float) - anchor_y
    return c * dx - s * dy, s * dx + c * dy


def ego_heading(yaw, anchor_yaw):
    return yaw - anchor_yaw + np.pi / 2


def box_corners(cx, cy, heading, length, width):
    """Corners (4, 2) of an oriented rectangle, counter-clockwise."""
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = length / 2, width / 2
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def box_pixels(region: CriticalRegion, cx, cy, heading, length, width):
    """Pixels whose centers lie in the box, as (rows, cols) index arrays.

    Box given in ego-frame meters. Only the bounding window is scanned, and
    pixels outside the grid are dropped.
    """
    res = region.resolution
    rad = 0.5 * np.hypot(length, width) + res
    c0 = max(int(np.floor((cx - rad) / res)) - region.l, 0)
    c1 = min(int(np.ceil((cx + rad) / res)) - region.l, region.w - 1)
    r0 = max(region.k - int(np.ceil((cy + rad) / res)), 0)
    r1 = min(region.k - int(np.floor((cy - rad) / res)), region.h - 1)
    if c0 > c1 or r0 > r1:
        empty = np.zeros(0, dtype=int)
        return empty, empty
    cols = np.arange(c0, c1 + 1)
    rows = np.arange(r0, r1 + 1)
    X = ((cols + region.l) * res)[None, :] - cx
    Y = ((region.k - rows) * res)[:, None] - cy
    c, s = np.cos(heading), np.sin(heading)
    u = X * c + Y * s
    v = -X * s + Y * c
    inside = (np.abs(u) <= length / 2 + EPS) & (np.abs(v) <= width / 2 + EPS)
    rr, cc = np.nonzero(inside)
    return rr + r0, cc + c0


def box_mask_full(region: CriticalRegion, cx, cy, heading, length, width, centers=None):
    """Same rule as :func:`box_pixels`, evaluated on every pixel of the grid."""
    X, Y = region.pixel_centers() if centers is None else centers
    c, s = np.cos(heading), np.sin(heading)
    u = (X - cx) * c + (Y - cy) * s
    v = -(X - cx) * s + (Y - cy) * c
    return (np.abs(u) <= length / 2 + EPS) & (np.abs(v) <= width / 2 + EPS)


def points_in_polygon(px, py, poly):
    """Even-odd ray casting; poly is an (N, 2) vertex array."""
    poly = np.asarray(poly, dtype=float)
    inside = np.zeros(np.shape(px), dtype=bool)
    xj, yj = poly[-1]
    for xi, yi in poly:
        crosses = (yi > py) != (yj > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (xj - xi) * (py - yi) / (yj - yi) + xi
        inside ^= crosses & (px < xint)
        xj, yj = xi, yi
    return inside


def _project(corners, axis):
    d = corners @ axis
    return d.min(), d.max()


def convex_overlap(a, b) -> bool:
    """Separating-axis test for two convex polygons given as (N, 2) arrays."""
    for poly in (a, b):
        n = len(poly)
        for i in range(n):
            e = poly[(i + 1) % n] - poly[i]
            axis = np.array([-e[1], e[0]])
            amin, amax = _project(a, axis)
            bmin, bmax = _project(b, axis)
            if amax < bmin or bmax < amin:
                return False
    return True


def box_intersects_rect(corners, xmin, xmax, ymin, ymax) -> bool:
    rect = np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])
    return convex_overlap(np.asarray(corners, dtype=float), rect)


def boxes_intersect_rect(cx, cy, heading, length, width, xmin, xmax, ymin, ymax):
    """Vectorized separating-axis test of many oriented boxes against one aligned rectangle."""
    cx, cy, heading = (np.asarray(a, dtype=float) for a in (cx, cy, heading))
    c, s = np.abs(np.cos(heading)), np.abs(np.sin(heading))
    ex = 0.5 * (length * c + width * s)
    ey = 0.5 * (length * s + width * c)
    hit = (cx + ex >= xmin) & (cx - ex <= xmax) & (cy + ey >= ymin) & (cy - ey <= ymax)
    rx, ry = 0.5 * (xmax - xmin), 0.5 * (ymax - ymin)
    dx, dy = 0.5 * (xmax + xmin) - cx, 0.5 * (ymax + ymin) - cy
    cs, sn = np.cos(heading), np.sin(heading)
    # rectangle projected on the box axes
    hit &= np.abs(dx * cs + dy * sn) <= length / 2 + rx * c + ry * s
    hit &= np.abs(-dx * sn + dy * cs) <= width / 2 + rx * s + ry * c
    return hit
