"""World model: poses, agent tracks, scenes, and the synthetic scene generator."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (CriticalRegion, box_corners, box_intersects_rect, boxes_intersect_rect,
                       convex_overlap, ego_heading, to_ego_frame, wrap_angle)

CLASSES = ("ego", "vehicle", "pedestrian")


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)):
            raise ValueError("pose coordinates must be finite")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))


@dataclass(frozen=True)
class AgentTrack:
    id: str
    cls: str
    extent: tuple[float, float]
    poses: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ValueError(f"unknown agent class {self.cls!r}")
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ValueError("extent must be strictly positive")

    @property
    def length(self):
        return self.extent[0]

    @property
    def width(self):
        return self.extent[1]


@dataclass(frozen=True)
class Horizon:
    H: int = 20
    T: int = 30
    t: int | None = None

    def __post_init__(self):
        if self.H < 1 or self.T < 1:
            raise ValueError("H and T must be >= 1")
        if self.t is None:
            object.__setattr__(self, "t", self.H)


@dataclass(frozen=True)
class Scene:
    id: str
    agents: tuple
    ego_id: str
    drivable: tuple = ()
    lanes: tuple = ()
    rate_hz: int = 10

    def __post_init__(self):
        egos = [a for a in self.agents if a.cls == "ego"]
        if len(egos) != 1 or egos[0].id != self.ego_id:
            raise ValueError("ego_id must name exactly one agent of class ego")

    @property
    def ego(self) -> AgentTrack:
        return self.agent(self.ego_id)

    def agent(self, agent_id) -> AgentTrack:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def ego_pose(self, timestep) -> Pose:
        try:
            return self.ego.poses[timestep]
        except KeyError:
            raise ValueError(f"no ego anchor at timestep {timestep}") from None

    def without(self, agent_id) -> "Scene":
        return Scene(self.id, tuple(a for a in self.agents if a.id != agent_id),
                     self.ego_id, self.drivable, self.lanes, self.rate_hz)


def footprint_in_ego(pose: Pose, extent, anchor: Pose):
    """Oriented box corners of a pose in the anchor's ego frame."""
    cx, cy = to_ego_frame(pose.x, pose.y, anchor.x, anchor.y, anchor.yaw)
    return box_corners(float(cx), float(cy), ego_heading(pose.yaw, anchor.yaw),
                       extent[0], extent[1])


def agents_in_region(scene: Scene, region: CriticalRegion, timestep: int,
                     anchor: Pose | None = None) -> set:
    """Ids of agents whose footprint at ``timestep`` intersects the region.

    The region is centered on ``anchor``; by default the ego pose at the same
    timestep.
    """
    if anchor is None:
        anchor = scene.ego.poses.get(timestep)
        if anchor is None:
            return set()
    xmin, xmax, ymin, ymax = region.extent_m()
    found = set()
    for a in scene.agents:
        pose = a.poses.get(timestep)
        if pose is None:
            continue
        if box_intersects_rect(footprint_in_ego(pose, a.extent, anchor), xmin, xmax, ymin, ymax):
            found.add(a.id)
    return found


def _agent_hits(agent, region, anchor, steps):
    xmin, xmax, ymin, ymax = region.extent_m()
    hits = []
    for s in steps:
        pose = agent.poses.get(s)
        hits.append(pose is not None and box_intersects_rect(
            footprint_in_ego(pose, agent.extent, anchor), xmin, xmax, ymin, ymax))
    return hits


def is_unseen(agent: AgentTrack, region: CriticalRegion, horizon: Horizon, anchor: Pose) -> bool:
    if agent.cls != "vehicle":
        return False
    t = horizon.t
    past = [s for s in agent.poses if s <= t]
    if any(_agent_hits(agent, region, anchor, past)):
        return False
    return any(_agent_hits(agent, region, anchor, range(t + 1, t + horizon.T + 1)))


def unseen_agent_ids(scene: Scene, region: CriticalRegion, horizon: Horizon) -> set:
    """Vehicles never in the region up to ``t`` that enter it within ``(t, t+T]``.

    Membership is judged in the grid frozen at the ego pose at ``t``, the same
    frame the raster and the ground-truth maps use.
    """
    anchor = scene.ego_pose(horizon.t)
    return {a.id for a in scene.agents if is_unseen(a, region, horizon, anchor)}


def interpolate_track(track: AgentTrack, src_hz: int, dst_hz: int) -> AgentTrack:
    """Upsample a track; timestep keys are rescaled by ``dst_hz // src_hz``.

    Positions are interpolated linearly and yaw along the shortest arc. Only
    consecutive keyframes are bridged; gaps stay gaps.
    """
    if src_hz <= 0 or dst_hz % src_hz:
        raise ValueError("dst_hz must be an integer multiple of src_hz")
    f = dst_hz // src_hz
    if f == 1:
        return track
    out = {}
    keys = sorted(track.poses)
    for i in keys:
        a = track.poses[i]
        out[i * f] = a
        b = track.poses.get(i + 1)
        if b is None:
            continue
        dyaw = wrap_angle(b.yaw - a.yaw)
        for j in range(1, f):
            u = j / f
            out[i * f + j] = Pose(a.x + u * (b.x - a.x), a.y + u * (b.y - a.y), a.yaw + u * dyaw)
    return AgentTrack(track.id, track.cls, track.extent, out)


# --- synthetic maps -------------------------------------------------------

LANE_OFFSET = 1.75
ROAD_HALF = 3.5
ROAD_LEN = 150.0


class Lane:
    """Directed centerline polyline with arc-length lookup."""

    def __init__(self, points, turn=False):
        self.points = np.asarray(points, dtype=float)
        seg = np.diff(self.points, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.s = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.seg_yaw = np.arctan2(seg[:, 1], seg[:, 0])
        self.turn = turn

    @property
    def length(self):
        return self.s[-1]

    def at(self, s):
        s = np.asarray(s, dtype=float)
        x = np.interp(s, self.s, self.points[:, 0])
        y = np.interp(s, self.s, self.points[:, 1])
        idx = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.seg_yaw) - 1)
        return x, y, self.seg_yaw[idx]


def _right(d):
    return np.array([d[1], -d[0]])


def _line_intersection(p1, d1, p2, d2):
    a = np.array([d1, -d2]).T
    lam = np.linalg.solve(a, p2 - p1)
    return p1 + lam[0] * d1


def _lane_path(d_in, d_out, radius=5.0, step=0.5):
    """Lane entering along d_in and leaving along d_out, through the origin junction."""
    d_in = np.asarray(d_in, float)
    d_out = np.asarray(d_out, float)
    r_in = _right(d_in) * LANE_OFFSET
    if np.allclose(d_in, d_out):
        pts = [r_in - d_in * ROAD_LEN, r_in + d_in * ROAD_LEN]
        return Lane(pts)
    r_out = _right(d_out) * LANE_OFFSET
    corner = _line_intersection(r_in, d_in, r_out, d_out)
    phi = math.atan2(d_in[0] * d_out[1] - d_in[1] * d_out[0], d_in @ d_out)
    tan_d = radius * math.tan(abs(phi) / 2)
    a0 = corner - d_in * tan_d
    a1 = corner + d_out * tan_d
    normal = np.array([-d_in[1], d_in[0]]) * np.sign(phi)
    center = a0 + normal * radius
    th0 = math.atan2(a0[1] - center[1], a0[0] - center[0])
    n = max(int(abs(phi) * radius / step), 4)
    th = th0 + np.linspace(0, phi, n + 1)
    arc = np.stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)], axis=1)
    pts = np.vstack([[a0 - d_in * ROAD_LEN], arc, [a1 + d_out * ROAD_LEN]])
    return Lane(pts, turn=True)


def _rect(xmin, xmax, ymin, ymax):
    return np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]], dtype=float)


E, W, N, S = (1, 0), (-1, 0), (0, 1), (0, -1)


def _left_of(d):
    return (-d[1], d[0])


def _right_of(d):
    return (d[1], -d[0])


def build_template(name: str):
    """Drivable polygons and lanes for one of the map templates."""
    horiz = _rect(-ROAD_LEN, ROAD_LEN, -ROAD_HALF, ROAD_HALF)
    if name == "straight":
        return [horiz], [_lane_path(E, E), _lane_path(W, W)]
    if name == "t_junction":
        stem = _rect(-ROAD_HALF, ROAD_HALF, -ROAD_LEN, ROAD_HALF)
        moves = [(E, E), (W, W), (E, S), (W, S), (N, W), (N, E)]
        return [horiz, stem], [_turn_lane(a, b) for a, b in moves]
    if name == "cross":
        vert = _rect(-ROAD_HALF, ROAD_HALF, -ROAD_LEN, ROAD_LEN)
        moves = []
        for d in (E, W, N, S):
            moves += [(d, d), (d, _left_of(d)), (d, _right_of(d))]
        return [horiz, vert], [_turn_lane(a, b) for a, b in moves]
    raise ValueError(f"unknown map template {name!r}")


def _turn_lane(d_in, d_out):
    if d_in == d_out:
        return _lane_path(d_in, d_out)
    left = d_out == _left_of(d_in)
    return _lane_path(d_in, d_out, radius=7.0 if left else 4.0)


TEMPLATES = ("straight", "t_junction", "cross")


@dataclass(frozen=True)
class GeneratorConfig:
    n_scenes: int = 10
    templates: tuple = TEMPLATES
    agent_range: tuple = (2, 6)
    pedestrian_range: tuple = (0, 2)
    speed_range: tuple = (3.0, 12.0)
    unseen_prob: float = 0.47
    unseen_range: tuple = (1, 2)
    region: CriticalRegion = field(default_factory=CriticalRegion.desk)
    horizon: Horizon = field(default_factory=Horizon)
    rate_hz: int = 10
    source_hz: int = 10

    def validate(self):
        if self.n_scenes <= 0:
            raise ValueError("n_scenes must be positive")
        if min(self.speed_range) <= 0 or self.speed_range[0] > self.speed_range[1]:
            raise ValueError("speed_range must be positive and ordered")
        if not 0.0 <= self.unseen_prob <= 1.0:
            raise ValueError("unseen_prob must lie in [0, 1]")
        for t in self.templates:
            if t not in TEMPLATES:
                raise ValueError(f"unknown map template {t!r}")
        if self.rate_hz % self.source_hz:
            raise ValueError("rate_hz must be a multiple of source_hz")


VEHICLE_EXTENT = (4.5, 2.0)
PED_EXTENT = (0.6, 0.6)
PROFILES = ("constant", "braking", "accelerating", "turning")


def _speed_profile(rng, n_steps, t, dt, v0, profile, vmax):
    v = np.full(n_steps, v0)
    idx = np.arange(n_steps)
    if profile == "braking":
        start = int(rng.integers(0, n_steps))
        decel = rng.uniform(1.0, 3.5)
        v = np.where(idx < start, v0, np.maximum(v0 - decel * (idx - start) * dt, 0.0))
    elif profile == "accelerating":
        start = int(rng.integers(0, n_steps))
        acc = rng.uniform(0.5, 2.5)
        v = np.where(idx < start, v0, np.minimum(v0 + acc * (idx - start) * dt, vmax))
    return v


def _arc_positions(v, t, s_t, dt):
    """Arc length at each step given per-step speeds, pinned to s_t at step t."""
    s = np.concatenate([[0.0], np.cumsum(v[:-1] * dt)])
    return s - s[t] + s_t


def _track_from_lane(agent_id, cls, extent, lane, s, sub=1):
    poses = {}
    x, y, yaw = lane.at(s)
    for i in range(0, len(s), sub):
        if 0.0 <= s[i] <= lane.length:
            poses[i] = Pose(float(x[i]), float(y[i]), float(yaw[i]))
    return AgentTrack(agent_id, cls, extent, poses)


class _Builder:
    def __init__(self, cfg: GeneratorConfig, rng):
        self.cfg = cfg
        self.rng = rng
        hz = cfg.horizon
        self.n_steps = hz.t + hz.T + 1
        self.dt = 1.0 / cfg.rate_hz
        self.sub = cfg.rate_hz // cfg.source_hz

    def track(self, agent_id, cls, extent, lane, s_t, v0, profile):
        cfg = self.cfg
        v = _speed_profile(self.rng, self.n_steps, cfg.horizon.t, self.dt, v0, profile,
                           cfg.speed_range[1] * 1.3)
        s = _arc_positions(v, cfg.horizon.t, s_t, self.dt)
        tr = _track_from_lane(agent_id, cls, extent, lane, s, self.sub)
        if self.sub > 1:
            keys = {k // self.sub: p for k, p in tr.poses.items()}
            tr = interpolate_track(AgentTrack(agent_id, cls, extent, keys),
                                   cfg.source_hz, cfg.rate_hz)
        return tr


def _pick_profile(rng, lane_pool):
    profile = PROFILES[int(rng.integers(len(PROFILES)))]
    turns = [ln for ln in lane_pool if ln.turn]
    if profile == "turning" and turns:
        return profile, turns[int(rng.integers(len(turns)))]
    if profile == "turning":
        profile = "constant"
    return profile, lane_pool[int(rng.integers(len(lane_pool)))]


def _junction_s(lane):
    # arc length closest to the junction center
    ss = np.arange(0.0, lane.length, 0.25)
    x, y, _ = lane.at(ss)
    return float(ss[int(np.argmin(np.hypot(x, y)))])


def _overlaps(track, others, t):
    p = track.poses.get(t)
    if p is None:
        return True
    a = box_corners(p.x, p.y, p.yaw, *track.extent)
    for o in others:
        q = o.poses.get(t)
        if q is not None and convex_overlap(a, box_corners(q.x, q.y, q.yaw, *o.extent)):
            return True
    return False


def _generate_one(cfg: GeneratorConfig, seed: int, index: int) -> Scene:
    rng = np.random.default_rng([seed, index])
    hz = cfg.horizon
    t = hz.t
    template = cfg.templates[int(rng.integers(len(cfg.templates)))]
    drivable, lanes = build_template(template)
    b = _Builder(cfg, rng)
    region = cfg.region
    lo, hi = cfg.speed_range

    ego_lane = lanes[int(rng.integers(len(lanes)))]
    s_ego = _junction_s(ego_lane) - rng.uniform(5.0, 35.0)
    ego = b.track("ego", "ego", VEHICLE_EXTENT, ego_lane, s_ego, rng.uniform(lo, hi),
                  PROFILES[int(rng.integers(3))])
    anchor = ego.poses[t]
    agents = [ego]

    n_vehicles = int(rng.integers(cfg.agent_range[0], cfg.agent_range[1] + 1))
    for i in range(n_vehicles):
        for _ in range(40):
            profile, lane = _pick_profile(rng, lanes)
            sj = _junction_s(lane)
            v0 = rng.uniform(lo, hi) * (0.6 if profile == "turning" else 1.0)
            tr = b.track(f"veh{i}", "vehicle", VEHICLE_EXTENT, lane,
                         rng.uniform(sj - 50.0, sj + 40.0), v0, profile)
            if _overlaps(tr, agents, t):
                continue
            if not any(_agent_hits(tr, region, anchor, [t])):
                continue
            agents.append(tr)
            break

    n_peds = int(rng.integers(cfg.pedestrian_range[0], cfg.pedestrian_range[1] + 1))
    for i in range(n_peds):
        for _ in range(40):
            lane = lanes[int(rng.integers(len(lanes)))]
            walk = Lane(lane.points - 3.5 * _normals(lane))
            sj = _junction_s(walk)
            tr = b.track(f"ped{i}", "pedestrian", PED_EXTENT, walk,
                         rng.uniform(sj - 30.0, sj + 30.0), rng.uniform(0.8, 1.6), "constant")
            if any(_agent_hits(tr, region, anchor, [t])):
                agents.append(tr)
                break

    if rng.random() < cfg.unseen_prob:
        n_unseen = int(rng.integers(cfg.unseen_range[0], cfg.unseen_range[1] + 1))
        for i in range(n_unseen):
            tr = _spawn_unseen(b, rng, lanes, region, hz, anchor, f"unseen{i}", agents)
            if tr is not None:
                agents.append(tr)

    return Scene(f"s{seed}-{index:05d}", tuple(agents), "ego", tuple(drivable),
                 tuple(lanes), cfg.rate_hz)


def _normals(lane):
    d = np.gradient(lane.points, axis=0)
    d /= np.maximum(np.hypot(d[:, 0], d[:, 1]), 1e-12)[:, None]
    return np.stack([-d[:, 1], d[:, 0]], axis=1)


def _spawn_unseen(b, rng, lanes, region, hz, anchor, agent_id, others):
    """Place a vehicle outside the region up to t that enters it within the horizon."""
    lo, hi = b.cfg.speed_range
    xmin, xmax, ymin, ymax = region.extent_m()
    for _ in range(30):
        profile, lane = _pick_profile(rng, lanes)
        if profile == "braking":
            profile = "constant"
        ss = np.arange(0.0, lane.length, 0.5)
        x, y, yaw = lane.at(ss)
        ex, ey = to_ego_frame(x, y, anchor.x, anchor.y, anchor.yaw)
        inside = boxes_intersect_rect(ex, ey, ego_heading(yaw, anchor.yaw), *VEHICLE_EXTENT,
                                      xmin, xmax, ymin, ymax)
        entries = np.nonzero(inside[1:] & ~inside[:-1])[0]
        if len(entries) == 0:
            continue
        s_entry = ss[entries[0] + 1]
        v0 = rng.uniform(max(lo, 5.0), max(hi, 5.0))
        lead = rng.uniform(0.1, 0.8) * hz.T * b.dt
        tr = b.track(agent_id, "vehicle", VEHICLE_EXTENT, lane, s_entry - v0 * lead - 0.5, v0,
                     profile)
        if is_unseen(tr, region, hz, anchor) and not _overlaps_future(tr, others, hz):
            return tr
    return None


def _overlaps_future(track, others, hz):
    return any(_overlaps(track, others, s) for s in range(hz.t + 1, hz.t + hz.T + 1, 5)
               if s in track.poses)


def synth_generate(config: GeneratorConfig, seed: int) -> list:
    """Generate ``config.n_scenes`` scenes; scene i draws from its own (seed, i) stream."""
    config.validate()
    return [_generate_one(config, seed, i) for i in range(config.n_scenes)]


# --- JSON ------------------------------------------------------------------

def scene_to_dict(scene: Scene, horizon: Horizon | None = None) -> dict:
    d = {
        "id": scene.id,
        "rate_hz": scene.rate_hz,
        "drivable": [np.asarray(p).tolist() for p in scene.drivable],
        "lanes": [np.asarray(ln.points).tolist() for ln in scene.lanes],
        "agents": [
            {
                "id": a.id,
                "class": a.cls,
                "extent": list(a.extent),
                "poses": {str(k): [p.x, p.y, p.yaw] for k, p in sorted(a.poses.items())},
            }
            for a in scene.agents
        ],
        "ego_id": scene.ego_id,
    }
    if horizon is not None:
        d["horizon"] = {"H": horizon.H, "T": horizon.T, "t": horizon.t}
    return d


def scene_from_dict(d: dict) -> Scene:
    agents = tuple(
        AgentTrack(a["id"], a["class"], tuple(a["extent"]),
                   {int(k): Pose(*v) for k, v in a["poses"].items()})
        for a in d["agents"]
    )
    return Scene(d["id"], agents, d["ego_id"],
                 tuple(np.asarray(p, dtype=float) for p in d.get("drivable", [])),
                 tuple(Lane(p) for p in d.get("lanes", [])), int(d.get("rate_hz", 10)))


def dumps_scene(scene: Scene, horizon: Horizon | None = None) -> str:
    return json.dumps(scene_to_dict(scene, horizon), sort_keys=True)


def horizon_from_dict(d: dict) -> Horizon | None:
    h = d.get("horizon")
    return None if h is None else Horizon(h["H"], h["T"], h["t"])
