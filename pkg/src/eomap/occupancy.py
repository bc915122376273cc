"""Ground truth: per-step occupancy grids, the earliest occupancy map, the unseen mask."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CriticalRegion, box_mask_full, box_pixels, ego_heading, to_ego_frame
from .raster import drivable_mask
from .scene import Horizon, Scene, unseen_agent_ids


@dataclass
class OccupancyGrid:
    data: np.ndarray
    timestep: int

    def __array__(self, dtype=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass
class EarliestOccupancyMap:
    """Per-pixel first occupied step in [0, T]; T means never within the horizon."""

    data: np.ndarray
    T: int

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.size and (d.min() < 0 or d.max() > self.T):
            raise ValueError("earliest occupancy values must lie in [0, T]")

    def __array__(self, dtype=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass
class UnseenMask:
    data: np.ndarray

    def __array__(self, dtype=None):
        return self.data if dtype is None else self.data.astype(dtype)


def _obstacles(scene, include_ego):
    return [a for a in scene.agents if include_ego or a.id != scene.ego_id]


def occupancy_at(scene: Scene, region: CriticalRegion, dt: int, horizon: Horizon,
                 include_ego: bool = False) -> OccupancyGrid:
    """Occupancy at step ``t + dt`` in the grid frozen at the ego pose at ``t``.

    A pixel is occupied if its center lies in any agent box or outside the
    drivable area. Every pixel is tested against every box.
    """
    anchor = scene.ego_pose(horizon.t)
    centers = region.pixel_centers()
    occ = ~drivable_mask(scene, region, anchor, centers)
    for agent in _obstacles(scene, include_ego):
        pose = agent.poses.get(horizon.t + dt)
        if pose is None:
            continue
        cx, cy = to_ego_frame(pose.x, pose.y, anchor.x, anchor.y, anchor.yaw)
        occ |= box_mask_full(region, cx, cy, ego_heading(pose.yaw, anchor.yaw),
                             agent.length, agent.width, centers)
    return OccupancyGrid(occ.astype(np.uint8), dt)


def earliest_occupancy(scene: Scene, region: CriticalRegion, horizon: Horizon,
                       include_ego: bool = False) -> EarliestOccupancyMap:
    T = horizon.T
    anchor = scene.ego_pose(horizon.t)
    E = np.full(region.shape, T, dtype=np.int16)
    E[~drivable_mask(scene, region, anchor)] = 0
    for agent in _obstacles(scene, include_ego):
        for dt in range(T):
            pose = agent.poses.get(horizon.t + dt)
            if pose is None:
                continue
            cx, cy = to_ego_frame(pose.x, pose.y, anchor.x, anchor.y, anchor.yaw)
            rr, cc = box_pixels(region, float(cx), float(cy),
                                ego_heading(pose.yaw, anchor.yaw), agent.length, agent.width)
            if len(rr):
                E[rr, cc] = np.minimum(E[rr, cc], dt)
    return EarliestOccupancyMap(E, T)


def earliest_from_grids(grids, T: int) -> np.ndarray:
    """Earliest occupied step from a stack of per-step binary grids, sentinel T."""
    stack = np.asarray(grids, dtype=bool)
    first = np.argmax(stack, axis=0)
    return np.where(stack.any(axis=0), first, T).astype(np.int16)


def unseen_mask(scene: Scene, region: CriticalRegion, horizon: Horizon,
                unseen_ids=None) -> UnseenMask:
    """Pixels swept by unseen vehicles over ``dt`` in (0, T]."""
    if unseen_ids is None:
        unseen_ids = unseen_agent_ids(scene, region, horizon)
    anchor = scene.ego_pose(horizon.t)
    M = np.zeros(region.shape, dtype=np.uint8)
    for agent in scene.agents:
        if agent.id not in unseen_ids:
            continue
        for dt in range(1, horizon.T + 1):
            pose = agent.poses.get(horizon.t + dt)
            if pose is None:
                continue
            cx, cy = to_ego_frame(pose.x, pose.y, anchor.x, anchor.y, anchor.yaw)
            rr, cc = box_pixels(region, float(cx), float(cy),
                                ego_heading(pose.yaw, anchor.yaw), agent.length, agent.width)
            M[rr, cc] = 1
    return UnseenMask(M)
