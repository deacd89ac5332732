"""Synthetic egocentric worlds: box scenes, agent walks, depth rendering.

Worlds live in Y-up coordinates with the ground at y = 0; obstacles are
axis-aligned boxes anchored to the ground.  Cameras follow the pinhole
convention of the geometry module (X right, Y down, Z forward), so the
world-to-camera rotation of a level camera flips Y.  Everything here is
deterministic under its seed and doubles as the analytic oracle for the
map-building and occluded-space code paths.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .egospace import EgoSpaceMap, GridSpec, ground_point_grid
from .errors import UnreachableGoalError, WorldGenerationError
from .geometry import CameraIntrinsics, DepthImage, in_image, project_to_image

TEMPLATES = ("open", "single-box", "corridor", "y-junction", "corner-turn", "random")

WORLD_UP = np.array([0.0, 1.0, 0.0])
WORLD_GRAVITY = np.array([0.0, -1.0, 0.0])


@dataclass(frozen=True)
class Box:
    lo: np.ndarray  # (3,) min corner, lo[1] == 0 (ground anchored)
    hi: np.ndarray  # (3,) max corner

    def footprint_contains(self, x, z):
        return (self.lo[0] <= x) & (x <= self.hi[0]) & (self.lo[2] <= z) & (z <= self.hi[2])

    def footprint_distance(self, x, z):
        dx = np.maximum(np.maximum(self.lo[0] - x, x - self.hi[0]), 0.0)
        dz = np.maximum(np.maximum(self.lo[2] - z, z - self.hi[2]), 0.0)
        return np.hypot(dx, dz)


def make_box(x0, x1, z0, z1, height) -> Box:
    return Box(lo=np.array([min(x0, x1), 0.0, min(z0, z1)]),
               hi=np.array([max(x0, x1), float(height), max(z0, z1)]))


@dataclass
class World:
    boxes: list
    bounds: tuple  # (x_min, x_max, z_min, z_max) walkable rectangle
    seed: int
    template: str = "random"
    meta: dict = field(default_factory=dict)

    def occupied_xz(self, x, z):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros(np.broadcast(x, np.asarray(z)).shape, dtype=bool)
        for box in self.boxes:
            out |= box.footprint_contains(x, z)
        return out

    def clearance(self, x, z):
        """Distance from (x, z) to the nearest box footprint."""
        x = np.asarray(x, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        best = np.full(np.broadcast(x, z).shape, np.inf)
        for box in self.boxes:
            best = np.minimum(best, box.footprint_distance(x, z))
        return best


def world_to_json(world: World) -> str:
    obj = {
        "template": world.template,
        "seed": world.seed,
        "bounds": list(world.bounds),
        "boxes": [[b.lo.tolist(), b.hi.tolist()] for b in world.boxes],
        "meta": world.meta,
    }
    return json.dumps(obj, sort_keys=True, indent=2)


def world_from_json(text: str) -> World:
    obj = json.loads(text)
    boxes = [Box(lo=np.array(lo), hi=np.array(hi)) for lo, hi in obj["boxes"]]
    return World(boxes=boxes, bounds=tuple(obj["bounds"]), seed=obj["seed"],
                 template=obj["template"], meta=obj.get("meta", {}))


@dataclass(frozen=True)
class WorldParams:
    template: str = "random"
    n_boxes: tuple = (3, 7)
    box_extent: tuple = (0.8, 2.5)  # XZ side lengths, meters
    box_height: tuple = (0.8, 2.0)
    bounds: tuple = (-15.0, 15.0, -8.0, 26.0)
    max_retries: int = 50


def generate_world(params: WorldParams, seed: int) -> World:
    """Build a deterministic scene for the given seed.

    Templates place their obstacles around the origin facing +Z; the
    random template scatters boxes while keeping a start zone near
    (0, z_min + 2) clear.
    """
    template = params.template.replace("_", "-")
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {params.template!r}; choose from {TEMPLATES}")
    rng = np.random.default_rng(seed)
    bounds = params.bounds
    boxes: list = []
    meta: dict = {}

    if template == "open":
        pass
    elif template == "single-box":
        w = rng.uniform(1.2, 2.4)
        d = rng.uniform(0.8, 1.6)
        h = rng.uniform(*params.box_height)
        cx = rng.uniform(-0.8, 0.8)
        cz = rng.uniform(3.0, 5.0)
        boxes.append(make_box(cx - w / 2, cx + w / 2, cz - d / 2, cz + d / 2, h))
        meta["box"] = [cx - w / 2, cx + w / 2, cz - d / 2, cz + d / 2]
    elif template == "corridor":
        half = rng.uniform(1.2, 1.8)
        z0, z1 = -2.0, 12.0
        h = rng.uniform(1.5, 2.0)
        boxes.append(make_box(-half - 0.5, -half, z0, z1, h))
        boxes.append(make_box(half, half + 0.5, z0, z1, h))
        meta["corridor"] = [-half, half, z0, z1]
    elif template == "y-junction":
        h = rng.uniform(1.5, 2.0)
        stem_half = 1.6
        boxes.append(make_box(-stem_half - 0.5, -stem_half, -2.0, 4.0, h))
        boxes.append(make_box(stem_half, stem_half + 0.5, -2.0, 4.0, h))
        div_half = rng.uniform(1.0, 1.4)
        boxes.append(make_box(-div_half, div_half, 4.5, 12.0, h))
        boxes.append(make_box(-div_half - 3.2 - 0.5, -div_half - 3.2, 3.5, 12.0, h))
        boxes.append(make_box(div_half + 3.2, div_half + 3.2 + 0.5, 3.5, 12.0, h))
        meta["branch_left"] = [-div_half - 3.2, -div_half, 6.0, 12.0]
        meta["branch_right"] = [div_half, div_half + 3.2, 6.0, 12.0]
    elif template == "corner-turn":
        h = rng.uniform(*params.box_height)
        edge = rng.uniform(1.0, 2.0)
        boxes.append(make_box(-7.0, edge, 5.0, 6.5, h))
        meta["behind"] = [-7.0, edge - 0.5, 6.8, 12.0]
        meta["edge_x"] = edge
    else:  # random
        lo_n, hi_n = params.n_boxes
        n = int(rng.integers(lo_n, hi_n + 1))
        placed = 0
        tries = 0
        while placed < n:
            tries += 1
            if tries > params.max_retries * max(n, 1):
                raise WorldGenerationError(
                    f"could not place {n} boxes after {tries} attempts")
            w = rng.uniform(*params.box_extent)
            d = rng.uniform(*params.box_extent)
            h = rng.uniform(*params.box_height)
            cx = rng.uniform(bounds[0] + 2, bounds[1] - 2)
            cz = rng.uniform(bounds[2] + 4, bounds[3] - 2)
            box = make_box(cx - w / 2, cx + w / 2, cz - d / 2, cz + d / 2, h)
            # keep the default start zone walkable
            if box.footprint_distance(0.0, bounds[2] + 2.0) < 1.2:
                continue
            if any(_boxes_overlap(box, other, gap=1.4) for other in boxes):
                continue
            boxes.append(box)
            placed += 1
    return World(boxes=boxes, bounds=bounds, seed=seed, template=template, meta=meta)


def _boxes_overlap(a: Box, b: Box, gap: float = 0.0) -> bool:
    return not (
        a.hi[0] + gap < b.lo[0] or b.hi[0] + gap < a.lo[0]
        or a.hi[2] + gap < b.lo[2] or b.hi[2] + gap < a.lo[2]
    )


# ---------------------------------------------------------------------------
# camera poses and rendering

@dataclass(frozen=True)
class CameraPose:
    position: np.ndarray  # (3,) world
    rotation: np.ndarray  # (3, 3) world -> camera: p_cam = R (p_w - position)

    def gravity_in_camera(self) -> np.ndarray:
        return self.rotation @ WORLD_GRAVITY

    def forward_world(self) -> np.ndarray:
        return self.rotation[2]


def pose_from_yaw_pitch(position, yaw: float, pitch: float) -> CameraPose:
    """Camera at ``position`` with heading ``yaw`` (about +Y, from +Z
    toward +X) pitched *down* by ``pitch`` radians."""
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    forward = np.array([cp * sy, -sp, cp * cy])
    right = np.cross(WORLD_GRAVITY, forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.vstack([right, down, forward])
    return CameraPose(position=np.asarray(position, dtype=np.float64), rotation=rotation)


def render_depth(world: World, pose: CameraPose, intr: CameraIntrinsics) -> DepthImage:
    """Analytic z-depth render: nearest ray hit against ground and boxes.

    Sky pixels (no hit) are invalid.  Depth is the distance along the
    optical axis, matching the back-projection convention.
    """
    u = np.arange(intr.width)
    v = np.arange(intr.height)
    uu, vv = np.meshgrid(u, v)
    dirs_cam = np.stack(
        [(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu, dtype=np.float64)],
        axis=-1,
    )
    dirs_w = dirs_cam.reshape(-1, 3) @ pose.rotation  # R.T applied to rows
    origin = pose.position

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = -origin[1] / dirs_w[:, 1]
    t_ground = np.where(dirs_w[:, 1] < 0, t_ground, np.inf)

    t_best = t_ground
    for box in world.boxes:
        t_hit = _ray_box_entry(origin, dirs_w, box)
        t_best = np.minimum(t_best, t_hit)

    depth = np.where(np.isfinite(t_best), t_best, 0.0).reshape(intr.height, intr.width)
    return DepthImage(intrinsics=intr, depth=depth)


def _ray_box_entry(origin: np.ndarray, dirs: np.ndarray, box: Box,
                   eps: float = 1e-9) -> np.ndarray:
    """Entry parameter of each ray into the box, inf where it misses.

    Assumes the origin lies outside the box (agent clearance guarantees
    this for rendered poses).
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (box.lo - origin) * inv
        t2 = (box.hi - origin) * inv
    tn = np.fmin(t1, t2)
    tf = np.fmax(t1, t2)
    tmin = np.fmax(np.fmax(tn[:, 0], tn[:, 1]), tn[:, 2])
    tmax = np.fmin(np.fmin(tf[:, 0], tf[:, 1]), tf[:, 2])
    hit = (tmax >= tmin) & (tmin > eps)
    return np.where(hit, tmin, np.inf)


def _ray_box_interval(origin: np.ndarray, dirs: np.ndarray, box: Box):
    """(tmin, tmax, valid) of the slab intersection for each ray."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (box.lo - origin) * inv
        t2 = (box.hi - origin) * inv
    tn = np.fmin(t1, t2)
    tf = np.fmax(t1, t2)
    tmin = np.fmax(np.fmax(tn[..., 0], tn[..., 1]), tn[..., 2])
    tmax = np.fmin(np.fmin(tf[..., 0], tf[..., 1]), tf[..., 2])
    return tmin, tmax, tmax >= tmin


# ---------------------------------------------------------------------------
# agent simulation

@dataclass(frozen=True)
class MotionParams:
    speed: tuple = (1.0, 1.4)  # per-path constant speed drawn from this range
    agent_radius: float = 0.3
    grid_res: float = 0.25
    dt: float = 0.5
    pitch_bands: tuple = ((0.0, 0.10), (0.20, 0.33), (0.45, 0.60))
    pitch_jitter: float = 0.01
    smoothing_passes: int = 2


@dataclass
class AgentPath:
    positions: np.ndarray  # (T, 2) ground (x, z)
    headings: np.ndarray  # (T,) yaw, radians
    pitches: np.ndarray  # (T,) gaze pitch below horizontal, radians
    dt: float
    speed: float
    waypoints: np.ndarray  # smoothed polyline the samples came from

    def __len__(self):
        return self.positions.shape[0]


def simulate_agent(world: World, start, goal, motion: MotionParams,
                   seed: int) -> AgentPath:
    """Shortest clear path from start to goal, smoothed and resampled.

    A* runs on an inflated occupancy grid; the polyline is shortcut and
    corner-cut while validating true clearance, then resampled at
    constant speed.  Heading follows the motion direction; pitch is
    drawn once per path from one of the configured bands.
    """
    return simulate_route(world, [start, goal], motion, seed)


def simulate_route(world: World, stops, motion: MotionParams, seed: int) -> AgentPath:
    """Like simulate_agent but chaining several stops into one walk."""
    rng = np.random.default_rng(seed)
    stops = [np.asarray(s, dtype=np.float64) for s in stops]
    if len(stops) < 2:
        raise ValueError("route needs at least start and goal")
    for s in stops:
        if world.occupied_xz(s[0], s[1]) or world.clearance(s[0], s[1]) < motion.agent_radius:
            raise UnreachableGoalError(f"stop {s.tolist()} is not in free space")

    occ, origin, res = _occupancy(world, motion)
    poly = [stops[0]]
    for a, b in zip(stops[:-1], stops[1:]):
        leg = _astar(occ, origin, res, a, b)
        poly.extend(leg[1:])
    poly = np.array(poly)
    poly = _shortcut(poly, world, motion.agent_radius)
    for _ in range(motion.smoothing_passes):
        poly = _chaikin(poly, world, motion.agent_radius)

    speed = float(rng.uniform(*motion.speed))
    positions = _resample(poly, speed * motion.dt)
    headings = _headings(positions)
    band = motion.pitch_bands[int(rng.integers(0, len(motion.pitch_bands)))]
    pitch0 = float(rng.uniform(*band))
    jitter = rng.normal(0.0, motion.pitch_jitter, size=positions.shape[0])
    pitches = np.clip(pitch0 + jitter, band[0], band[1])
    return AgentPath(positions=positions, headings=headings, pitches=pitches,
                     dt=motion.dt, speed=speed, waypoints=poly)


def _occupancy(world: World, motion: MotionParams):
    x0, x1, z0, z1 = world.bounds
    res = motion.grid_res
    nx = int(math.ceil((x1 - x0) / res))
    nz = int(math.ceil((z1 - z0) / res))
    xs = x0 + (np.arange(nx) + 0.5) * res
    zs = z0 + (np.arange(nz) + 0.5) * res
    xx, zz = np.meshgrid(xs, zs)
    # extra half-diagonal so segments between free cell centers stay clear
    inflate = motion.agent_radius + res * math.sqrt(2.0) / 2.0
    occ = np.zeros((nz, nx), dtype=bool)
    for box in world.boxes:
        occ |= (
            (xx >= box.lo[0] - inflate) & (xx <= box.hi[0] + inflate)
            & (zz >= box.lo[2] - inflate) & (zz <= box.hi[2] + inflate)
        )
    return occ, (x0, z0), res


_MOVES = [(-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
          (-1, -1, math.sqrt(2)), (-1, 1, math.sqrt(2)),
          (1, -1, math.sqrt(2)), (1, 1, math.sqrt(2))]


def _astar(occ: np.ndarray, origin, res: float, start, goal):
    nz, nx = occ.shape

    def to_cell(p):
        j = int((p[0] - origin[0]) / res)
        i = int((p[1] - origin[1]) / res)
        return min(max(i, 0), nz - 1), min(max(j, 0), nx - 1)

    def to_point(cell):
        i, j = cell
        return np.array([origin[0] + (j + 0.5) * res, origin[1] + (i + 0.5) * res])

    start_cell = _nearest_free(occ, to_cell(start))
    goal_cell = _nearest_free(occ, to_cell(goal))

    g = {start_cell: 0.0}
    came = {start_cell: None}
    counter = 0
    heap = [(_octile(start_cell, goal_cell), counter, start_cell)]
    closed = set()
    while heap:
        _, _, cur = heapq.heappop(heap)
        if cur == goal_cell:
            cells = []
            while cur is not None:
                cells.append(cur)
                cur = came[cur]
            cells.reverse()
            pts = [np.asarray(start, dtype=np.float64)]
            pts += [to_point(c) for c in cells[1:-1]]
            pts.append(np.asarray(goal, dtype=np.float64))
            return pts
        if cur in closed:
            continue
        closed.add(cur)
        ci, cj = cur
        for di, dj, cost in _MOVES:
            ni, nj = ci + di, cj + dj
            if not (0 <= ni < nz and 0 <= nj < nx) or occ[ni, nj]:
                continue
            if di and dj and (occ[ci + di, cj] or occ[ci, cj + dj]):
                continue  # no squeezing through diagonal gaps
            cand = g[cur] + cost * res
            nxt = (ni, nj)
            if cand < g.get(nxt, math.inf):
                g[nxt] = cand
                came[nxt] = cur
                counter += 1
                heapq.heappush(heap, (cand + _octile(nxt, goal_cell) * res, counter, nxt))
    raise UnreachableGoalError("no clear path between start and goal")


def _octile(a, b):
    di, dj = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(di, dj) + (math.sqrt(2) - 1) * min(di, dj)


def _nearest_free(occ: np.ndarray, cell):
    if not occ[cell]:
        return cell
    nz, nx = occ.shape
    for radius in range(1, max(nz, nx)):
        for di in range(-radius, radius + 1):
            for dj in range(-radius, radius + 1):
                if max(abs(di), abs(dj)) != radius:
                    continue
                i, j = cell[0] + di, cell[1] + dj
                if 0 <= i < nz and 0 <= j < nx and not occ[i, j]:
                    return (i, j)
    raise UnreachableGoalError("occupancy grid is fully blocked")


def _segment_clear(world: World, a, b, radius: float, step: float = 0.05) -> bool:
    n = max(int(np.linalg.norm(b - a) / step), 1)
    t = np.linspace(0.0, 1.0, n + 1)
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    return bool((world.clearance(pts[:, 0], pts[:, 1]) >= radius).all())


def _shortcut(poly: np.ndarray, world: World, radius: float) -> np.ndarray:
    pts = [poly[i] for i in range(poly.shape[0])]
    changed = True
    while changed and len(pts) > 2:
        changed = False
        i = 0
        while i + 2 < len(pts):
            if _segment_clear(world, pts[i], pts[i + 2], radius):
                del pts[i + 1]
                changed = True
            else:
                i += 1
    return np.array(pts)


def _chaikin(poly: np.ndarray, world: World, radius: float) -> np.ndarray:
    if poly.shape[0] < 3:
        return poly
    out = [poly[0]]
    for i in range(poly.shape[0] - 1):
        a, b = poly[i], poly[i + 1]
        q = 0.75 * a + 0.25 * b
        r = 0.25 * a + 0.75 * b
        for cand in (q, r):
            prev = out[-1]
            if _segment_clear(world, prev, cand, radius):
                out.append(cand)
            else:
                out.append(a if cand is q else b)
    out.append(poly[-1])
    dedup = [out[0]]
    for p in out[1:]:
        if np.linalg.norm(p - dedup[-1]) > 1e-9:
            dedup.append(p)
    return np.array(dedup)


def _resample(poly: np.ndarray, step: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    n = max(int(math.floor(total / step)), 1)
    targets = np.arange(n + 1) * step
    x = np.interp(targets, s, poly[:, 0])
    z = np.interp(targets, s, poly[:, 1])
    return np.column_stack([x, z])


def _headings(positions: np.ndarray) -> np.ndarray:
    d = np.diff(positions, axis=0)
    yaw = np.arctan2(d[:, 0], d[:, 1])
    return np.append(yaw, yaw[-1] if yaw.size else 0.0)


def camera_poses(path: AgentPath, cam_height: float = 1.6):
    """Camera pose per path sample: eye above the ground position, heading
    along motion, pitched down by the sampled gaze pitch."""
    poses = []
    for (x, z), yaw, pitch in zip(path.positions, path.headings, path.pitches):
        poses.append(pose_from_yaw_pitch((x, cam_height, z), yaw, pitch))
    return poses


def sample_route(world: World, rng: np.random.Generator, motion: MotionParams,
                 min_length: float = 10.0, max_stops: int = 6):
    """Draw a template-appropriate route (list of stops) through free space."""
    x0, x1, z0, z1 = world.bounds

    def free_point(lo_x, hi_x, lo_z, hi_z):
        for _ in range(200):
            p = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_z, hi_z)])
            if world.clearance(p[0], p[1]) >= motion.agent_radius + 0.2:
                return p
        raise WorldGenerationError("could not sample a free point")

    if world.template == "corridor":
        c = world.meta["corridor"]
        return [np.array([rng.uniform(c[0] + 0.5, c[1] - 0.5), c[2] - 1.5]),
                np.array([rng.uniform(c[0] + 0.5, c[1] - 0.5), c[3] + 2.0])]
    if world.template == "y-junction":
        branch = world.meta["branch_left" if rng.random() < 0.5 else "branch_right"]
        start = np.array([rng.uniform(-1.0, 1.0), -1.0])
        exit_pt = np.array([rng.uniform(branch[0] + 0.6, branch[1] - 0.6), branch[3] + 1.5])
        return [start, exit_pt]
    if world.template == "corner-turn":
        behind = world.meta["behind"]
        start = np.array([rng.uniform(-1.5, 1.0), rng.uniform(-3.0, -1.0)])
        dest = np.array([rng.uniform(behind[0] + 0.6, behind[1] - 0.6),
                         rng.uniform(behind[2] + 0.5, behind[3] - 0.5)])
        return [start, dest]
    if world.template == "single-box":
        start = np.array([rng.uniform(-1.0, 1.0), rng.uniform(-3.0, -1.5)])
        dest = np.array([rng.uniform(-2.0, 2.0), rng.uniform(8.0, 11.0)])
        return [start, dest]

    # open / random: chain stops until the route is long enough
    stops = [free_point(x0 + 2, x1 - 2, z0 + 1.5, z0 + 4)]
    length = 0.0
    attempts = 0
    while length < min_length and len(stops) < max_stops and attempts < 300:
        attempts += 1
        nxt = free_point(x0 + 2, x1 - 2, z0 + 4, z1 - 2)
        if np.linalg.norm(nxt - stops[-1]) < 6.0:
            continue
        length += float(np.linalg.norm(nxt - stops[-1]))
        stops.append(nxt)
    if len(stops) < 2:
        raise WorldGenerationError("could not sample a route of sufficient length")
    return stops


# ---------------------------------------------------------------------------
# analytic oracles

def true_ego_frame(pose: CameraPose):
    """Noise-free ego frame of a pose, built from the analytic ground plane.

    Mirrors the fitted pipeline exactly (same frame constructor) but
    skips RANSAC: the plane is y = 0 in world coordinates.
    """
    from .geometry import GroundPlane, build_ego_frame

    n_cam = pose.rotation @ WORLD_UP
    foot_world = np.array([pose.position[0], 0.0, pose.position[2]])
    p0_cam = pose.rotation @ (foot_world - pose.position)
    d = -float(n_cam @ p0_cam)
    plane = GroundPlane(normal=n_cam, offset=d)
    return build_ego_frame(plane, np.array([0.0, 0.0, 1.0]))


def ego_axes_world(pose: CameraPose):
    """True ego frame of a pose in world coordinates.

    Returns (foot, x_axis, y_axis, z_axis, eye_height): the frame's
    origin on the ground and its axes, with Z the horizontal gaze.
    """
    forward = pose.forward_world()
    z_raw = forward - forward[1] * WORLD_UP
    z_axis = z_raw / np.linalg.norm(z_raw)
    y_axis = WORLD_UP
    x_axis = np.cross(y_axis, z_axis)
    foot = np.array([pose.position[0], 0.0, pose.position[2]])
    return foot, x_axis, y_axis, z_axis, float(pose.position[1])


def oracle_egospace(world: World, pose: CameraPose, intr: CameraIntrinsics,
                    spec: GridSpec) -> EgoSpaceMap:
    """Exact occlusion map by analytic ray-box casting (no rendering).

    Per cell: cast the ray from the eye to the cell's ground point, take
    the nearest box intersection and record its height above ground;
    no intersection means visible free ground (0).  The FOV mask uses
    the same analytic projection as the splatting path.
    """
    foot, x_axis, _, z_axis, h = ego_axes_world(pose)
    grid = ground_point_grid(spec).reshape(-1, 2)
    targets = foot[None, :] + grid[:, 0:1] * x_axis[None, :] + grid[:, 1:2] * z_axis[None, :]
    eye = pose.position
    dirs = targets - eye

    lam = np.full(targets.shape[0], np.inf)
    for box in world.boxes:
        tmin, tmax, valid = _ray_box_interval(eye, dirs, box)
        hit = valid & (tmin > 1e-12) & (tmin <= 1.0)
        lam = np.where(hit, np.minimum(lam, tmin), lam)

    phi = np.where(np.isfinite(lam), np.clip(h * (1.0 - lam), 0.0, spec.phi_max), 0.0)

    cam_pts = (targets - eye) @ pose.rotation.T
    u, v, z = project_to_image(cam_pts, intr)
    observed = in_image(u, v, z, intr).reshape(spec.n_radius, spec.n_theta)
    phi = phi.reshape(spec.n_radius, spec.n_theta)
    phi[~observed] = spec.phi_max
    return EgoSpaceMap(spec=spec, phi=phi, observed=observed)


def oracle_occluded_free(world: World, pose: CameraPose, extent, resolution: float):
    """Ground-truth labels for occluded-but-walkable space.

    The grid matches the discovery map layout over ``extent`` (x_min,
    x_max, z_min, z_max) in ego coordinates.  A cell is True when its
    center is outside every box footprint and the eye ray to it is
    interrupted by a box strictly before reaching it.
    """
    foot, x_axis, _, z_axis, _ = ego_axes_world(pose)
    x_min, x_max, z_min, z_max = extent
    nx = int(round((x_max - x_min) / resolution))
    nz = int(round((z_max - z_min) / resolution))
    xs = x_min + (np.arange(nx) + 0.5) * resolution
    zs = z_min + (np.arange(nz) + 0.5) * resolution
    xx, zz = np.meshgrid(xs, zs)
    pts = np.column_stack([xx.ravel(), zz.ravel()])
    targets = foot[None, :] + pts[:, 0:1] * x_axis[None, :] + pts[:, 1:2] * z_axis[None, :]
    eye = pose.position
    dirs = targets - eye

    free = ~world.occupied_xz(targets[:, 0], targets[:, 2])
    occluded = np.zeros(targets.shape[0], dtype=bool)
    for box in world.boxes:
        tmin, tmax, valid = _ray_box_interval(eye, dirs, box)
        occluded |= valid & (tmin < 1.0 - 1e-9) & (tmax > 1e-9)
    return (free & occluded).reshape(nz, nx)
