"""Ego-centric multi-channel history raster (the network input)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (CriticalRegion, box_pixels, ego_heading, points_in_polygon,
                       to_ego_frame)
from .scene import Horizon, Pose, Scene

CHANNELS = ("drivable", "lanes", "ego", "vehicle", "pedestrian")
_CLASS_CHANNEL = {"ego": 2, "vehicle": 3, "pedestrian": 4}

# palette: ego red, vehicles yellow, pedestrians orange
PALETTE = {
    "drivable": (70, 70, 70),
    "lanes": (150, 150, 170),
    "ego": (255, 0, 0),
    "vehicle": (255, 220, 0),
    "pedestrian": (255, 140, 0),
}


@dataclass
class RasterImage:
    data: np.ndarray
    region: CriticalRegion
    channels: tuple = CHANNELS

    def __array__(self, dtype=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def to_rgb(self) -> np.ndarray:
        """Compose an (h, w, 3) uint8 view; later channels paint over earlier ones."""
        rgb = np.zeros(self.data.shape[1:] + (3,), dtype=float)
        for i, name in enumerate(self.channels):
            a = self.data[i][..., None]
            if name == "lanes":
                a = (a > 0).astype(float) * 0.6
            color = np.array(PALETTE[name], dtype=float)
            rgb = np.where(a > 0, (1 - a) * rgb + a * color, rgb)
        return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def world_to_pixel(point, region: CriticalRegion, ego_pose: Pose):
    """World point (x, y) in meters to (row, col) of the ego-centric grid.

    Out-of-bounds indices are returned as-is.
    """
    ex, ey = to_ego_frame(point[0], point[1], ego_pose.x, ego_pose.y, ego_pose.yaw)
    row, col = region.to_pixel(ex, ey)
    return int(row), int(col)


def drivable_mask(scene: Scene, region: CriticalRegion, anchor: Pose, centers=None) -> np.ndarray:
    X, Y = region.pixel_centers() if centers is None else centers
    mask = np.zeros(region.shape, dtype=bool)
    for poly in scene.drivable:
        poly = np.asarray(poly, dtype=float)
        ex, ey = to_ego_frame(poly[:, 0], poly[:, 1], anchor.x, anchor.y, anchor.yaw)
        mask |= points_in_polygon(X, Y, np.stack([ex, ey], axis=1))
    return mask


def lane_layer(scene: Scene, region: CriticalRegion, anchor: Pose) -> np.ndarray:
    """Lane centerlines; the value encodes travel direction in the ego frame."""
    out = np.zeros(region.shape, dtype=np.float32)
    step = region.resolution / 2
    for lane in scene.lanes:
        pts = np.asarray(lane.points, dtype=float)
        seg = np.diff(pts, axis=0)
        for (x0, y0), (dx, dy) in zip(pts[:-1], seg):
            n = max(int(np.hypot(dx, dy) / step), 1)
            u = np.arange(n + 1) / n
            ex, ey = to_ego_frame(x0 + u * dx, y0 + u * dy, anchor.x, anchor.y, anchor.yaw)
            row, col = region.to_pixel(ex, ey)
            ok = (row >= 0) & (row < region.h) & (col >= 0) & (col < region.w)
            if not ok.any():
                continue
            heading = np.mod(ego_heading(np.arctan2(dy, dx), anchor.yaw), 2 * np.pi)
            out[row[ok], col[ok]] = 0.5 + 0.5 * heading / (2 * np.pi)
    return out


def history_frames(scene: Scene, horizon: Horizon, history_hz: int) -> list:
    """History timesteps oldest to newest, ending at the current step."""
    if history_hz <= 0 or scene.rate_hz % history_hz:
        raise ValueError("history_hz must divide the scene rate")
    step = scene.rate_hz // history_hz
    n = horizon.H // step + 1
    return [horizon.t - j * step for j in range(n - 1, -1, -1)]


def rasterize_history(scene: Scene, region: CriticalRegion, horizon: Horizon,
                      history_hz: int = 2) -> RasterImage:
    anchor = scene.ego.poses.get(horizon.t)
    if anchor is None:
        raise ValueError("no ego anchor")
    data = np.zeros((len(CHANNELS),) + region.shape, dtype=np.float32)
    data[0] = drivable_mask(scene, region, anchor)
    data[1] = lane_layer(scene, region, anchor)
    frames = history_frames(scene, horizon, history_hz)
    n = len(frames)
    for rank, step in enumerate(frames):
        value = (rank + 1) / n
        for agent in scene.agents:
            pose = agent.poses.get(step)
            if pose is None:
                continue
            cx, cy = to_ego_frame(pose.x, pose.y, anchor.x, anchor.y, anchor.yaw)
            rr, cc = box_pixels(region, float(cx), float(cy),
                                ego_heading(pose.yaw, anchor.yaw), *agent.extent)
            data[_CLASS_CHANNEL[agent.cls], rr, cc] = value
    return RasterImage(data, region)
