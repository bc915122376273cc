"""Physical kinematic predictors and the Poisson unseen-vehicle injection protocol.

Trajectories are turned into earliest occupancy maps by spline densification
and box sweeping, the same conversion used for any trajectory predictor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import CriticalRegion, box_pixels, ego_heading, to_ego_frame, wrap_angle
from .occupancy import EarliestOccupancyMap
from .raster import drivable_mask
from .scene import AgentTrack, Horizon, Pose, Scene, agents_in_region

MODELS = ("cv", "ca", "cm", "cy")
STRAIGHT_EPS = 1e-6  # rad/s
INJECT_EXTENT = (4.5, 2.0)
DENSIFY = 10


@dataclass(frozen=True)
class KinematicState:
    position: tuple
    yaw: float
    velocity: tuple | None = None
    acceleration: tuple | None = None
    yaw_rate: float | None = None
    speed: float | None = None

    def __post_init__(self):
        vals = [*self.position, self.yaw]
        for extra in (self.velocity, self.acceleration):
            if extra is not None:
                vals += list(extra)
        vals += [v for v in (self.yaw_rate, self.speed) if v is not None]
        if not np.all(np.isfinite(vals)):
            raise ValueError("kinematic state must be finite")
        if self.velocity is not None and self.speed is not None:
            if abs(np.hypot(*self.velocity) - self.speed) > 1e-6 * max(1.0, self.speed):
                raise ValueError("speed must equal |velocity|")

    def scalar_speed(self):
        if self.speed is not None:
            return self.speed
        if self.velocity is not None:
            return float(np.hypot(*self.velocity))
        raise ValueError("state has neither speed nor velocity")


@dataclass
class Trajectory:
    steps: np.ndarray   # (n,) int, strictly increasing
    poses: np.ndarray   # (n, 3): x, y, yaw
    extent: tuple = INJECT_EXTENT

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=int)
        self.poses = np.asarray(self.poses, dtype=float).reshape(-1, 3)
        if len(self.steps) != len(self.poses):
            raise ValueError("steps and poses differ in length")
        if len(self.steps) > 1 and np.any(np.diff(self.steps) <= 0):
            raise ValueError("trajectory steps must be strictly increasing")


def estimate_state(track: AgentTrack, t: int, dt: float) -> KinematicState:
    """Finite-difference state: velocity/yaw from 2 poses, acceleration/yaw rate from 3."""
    p0 = track.poses[t]
    p1 = track.poses.get(t - 1)
    p2 = track.poses.get(t - 2)
    if p1 is None:
        return KinematicState((p0.x, p0.y), p0.yaw, (0.0, 0.0), (0.0, 0.0), 0.0, 0.0)
    v = ((p0.x - p1.x) / dt, (p0.y - p1.y) / dt)
    acc, omega = (0.0, 0.0), 0.0
    if p2 is not None:
        acc = ((p0.x - 2 * p1.x + p2.x) / dt ** 2, (p0.y - 2 * p1.y + p2.y) / dt ** 2)
        omega = wrap_angle(p0.yaw - p2.yaw) / (2 * dt)
    return KinematicState((p0.x, p0.y), p0.yaw, v, acc, omega, float(np.hypot(*v)))


def _arc_offsets(s0, sdot, yaw0, omega, tau):
    """Displacement under linearly varying speed and constant yaw rate (closed form)."""
    if sdot < 0 and s0 > 0:
        tau = np.minimum(tau, -s0 / sdot)  # stops, never reverses
    elif sdot < 0:
        tau = np.zeros_like(tau)
    if abs(omega) < STRAIGHT_EPS:
        d = s0 * tau + 0.5 * sdot * tau ** 2
        return d * np.cos(yaw0), d * np.sin(yaw0), np.full_like(tau, yaw0)
    th = yaw0 + omega * tau
    s = s0 + sdot * tau
    dx = (s * np.sin(th) - s0 * np.sin(yaw0)) / omega \
        + sdot * (np.cos(th) - np.cos(yaw0)) / omega ** 2
    dy = (-s * np.cos(th) + s0 * np.cos(yaw0)) / omega \
        + sdot * (np.sin(th) - np.sin(yaw0)) / omega ** 2
    return dx, dy, th


def rollout(model: str, state: KinematicState, horizon: Horizon, dt: float,
            extent=INJECT_EXTENT) -> Trajectory:
    """Predict steps 1..T with one of the physical models cv, ca, cm, cy."""
    model = model.lower()
    if dt <= 0:
        raise ValueError("dt must be positive")
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    steps = np.arange(1, horizon.T + 1)
    tau = steps * dt
    x0, y0 = state.position
    if model in ("cv", "ca"):
        v = np.asarray(state.velocity if state.velocity is not None else
                       state.scalar_speed() * np.array([np.cos(state.yaw), np.sin(state.yaw)]))
        x = x0 + v[0] * tau
        y = y0 + v[1] * tau
        if model == "cv":
            yaw = np.arctan2(v[1], v[0]) if np.hypot(*v) > 1e-9 else state.yaw
        else:
            if state.acceleration is None:
                raise ValueError("CA needs an acceleration")
            a = state.acceleration
            x = x + 0.5 * a[0] * tau ** 2
            y = y + 0.5 * a[1] * tau ** 2
            yaw = state.yaw
        yaws = np.full_like(tau, yaw)
    else:
        if state.yaw_rate is None:
            raise ValueError(f"{model.upper()} needs a yaw rate")
        sdot = 0.0
        if model == "cm" and state.acceleration is not None:
            sdot = float(np.dot(state.acceleration, (np.cos(state.yaw), np.sin(state.yaw))))
        dx, dy, yaws = _arc_offsets(state.scalar_speed(), sdot, state.yaw, state.yaw_rate, tau)
        x, y = x0 + dx, y0 + dy
    return Trajectory(steps, np.stack([x, y, yaws], axis=1), tuple(extent))


def densify(traj: Trajectory, factor=DENSIFY):
    """Natural cubic spline resampling; yaw from the path tangent.

    Returns (tau, x, y, yaw) at ``factor`` samples per step.
    """
    steps = traj.steps.astype(float)
    if len(steps) < 2:
        return steps, traj.poses[:, 0], traj.poses[:, 1], traj.poses[:, 2]
    n = factor * (len(steps) - 1) + 1
    tau = np.linspace(steps[0], steps[-1], n)
    sx = CubicSpline(steps, traj.poses[:, 0], bc_type="natural")
    sy = CubicSpline(steps, traj.poses[:, 1], bc_type="natural")
    dx, dy = sx(tau, 1), sy(tau, 1)
    moving = np.hypot(dx, dy) > 1e-6
    knot_yaw = traj.poses[np.clip(np.rint((tau - steps[0]) / (steps[-1] - steps[0])
                                          * (len(steps) - 1)).astype(int), 0, len(steps) - 1), 2]
    yaw = np.where(moving, np.arctan2(dy, dx), knot_yaw)
    return tau, sx(tau), sy(tau), yaw


def trajectory_to_eom(trajs, region: CriticalRegion, drivable, horizon: Horizon,
                      anchor: Pose | None = None) -> EarliestOccupancyMap:
    """Sweep trajectory boxes into an earliest occupancy map.

    ``drivable`` is a boolean h x w mask (pixels outside it are 0). Poses are
    in the world frame when ``anchor`` is given, otherwise in the ego frame.
    """
    T = horizon.T
    E = np.full(region.shape, float(T))
    E[~np.asarray(drivable, dtype=bool)] = 0.0
    for traj in trajs:
        tau, x, y, yaw = densify(traj)
        keep = tau < T
        tau, x, y, yaw = tau[keep], x[keep], y[keep], yaw[keep]
        if anchor is not None:
            x, y = to_ego_frame(x, y, anchor.x, anchor.y, anchor.yaw)
            yaw = ego_heading(yaw, anchor.yaw)
        L, W = traj.extent
        for ti, xi, yi, hi in zip(tau, x, y, yaw):
            rr, cc = box_pixels(region, float(xi), float(yi), float(hi), L, W)
            if len(rr):
                E[rr, cc] = np.minimum(E[rr, cc], ti)
    return EarliestOccupancyMap(E, T)


def seen_agents(scene: Scene, region: CriticalRegion, horizon: Horizon) -> list:
    """Non-ego agents inside the region at some step up to t (fixed grid at t)."""
    anchor = scene.ego_pose(horizon.t)
    ids = set()
    for s in range(horizon.t - horizon.H, horizon.t + 1):
        ids |= agents_in_region(scene, region, s, anchor)
    return [a for a in scene.agents if a.id in ids and a.id != scene.ego_id]


def predict_physical(scene: Scene, region: CriticalRegion, horizon: Horizon, model: str,
                     drivable=None) -> EarliestOccupancyMap:
    anchor = scene.ego_pose(horizon.t)
    dt = 1.0 / scene.rate_hz
    trajs = []
    for agent in seen_agents(scene, region, horizon):
        if horizon.t not in agent.poses:
            continue
        state = estimate_state(agent, horizon.t, dt)
        tr = rollout(model, state, horizon, dt, agent.extent)
        p = agent.poses[horizon.t]
        trajs.append(Trajectory(np.concatenate([[0], tr.steps]),
                                np.vstack([[p.x, p.y, p.yaw], tr.poses]), agent.extent))
    if drivable is None:
        drivable = drivable_mask(scene, region, anchor)
    return trajectory_to_eom(trajs, region, drivable, horizon, anchor)


@dataclass(frozen=True)
class Injection:
    row: int
    col: int
    heading: float
    arrival: int


def _boundary_cells(region: CriticalRegion):
    h, w = region.shape
    cells = [(0, c, -np.pi / 2) for c in range(w)]                # top edge, drive down
    cells += [(h - 1, c, np.pi / 2) for c in range(w)]            # bottom edge, drive up
    cells += [(r, 0, 0.0) for r in range(1, h - 1)]               # left edge, drive right
    cells += [(r, w - 1, np.pi) for r in range(1, h - 1)]         # right edge, drive left
    return cells


def poisson_injections(region: CriticalRegion, T: int, lam: float, seed) -> list:
    """Sample n ~ Poisson(lam) boundary entries with arrival steps uniform in 1..T."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(lam))
    cells = _boundary_cells(region)
    out = []
    for _ in range(n):
        r, c, heading = cells[int(rng.integers(len(cells)))]
        out.append(Injection(r, c, heading, int(rng.integers(1, T + 1))))
    return out


def inject_poisson_unseen(eom, region: CriticalRegion, lam: float, seed,
                          T: int | None = None) -> EarliestOccupancyMap:
    """Lower the map under boxes of injected vehicles entering from the boundary."""
    if T is None:
        T = eom.T if isinstance(eom, EarliestOccupancyMap) else None
        if T is None:
            raise ValueError("T is required for a bare array")
    E = np.array(np.asarray(eom), dtype=float, copy=True)
    L, W = INJECT_EXTENT
    res = region.resolution
    for inj in poisson_injections(region, T, lam, seed):
        x = (inj.col + region.l) * res + 0.5 * L * np.cos(inj.heading)
        y = (region.k - inj.row) * res + 0.5 * L * np.sin(inj.heading)
        rr, cc = box_pixels(region, x, y, inj.heading, L, W)
        E[rr, cc] = np.minimum(E[rr, cc], inj.arrival)
    return EarliestOccupancyMap(E, T)
