"""Occlusion scenario sampling, expert paths, and dataset persistence.

Three archetypes are generated: ``single_side`` (one occluder between
tracker and target), ``double_side`` (a second obstacle flanks the
target, leaving a central gap), and ``corridor`` (obstacles on the left,
right, and rear of the target). Every accepted scenario has target
visibility strictly below 1 from the tracker camera.

Dataset files are JSON Lines; grids are anchored at the world origin
(0, 0) and stored run-length encoded so persisted trajectories can be
replayed against them.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoPath, SamplingExhausted
from .grid import (OccupancyGrid, astar, cell_center, egocentric_crop, is_free,
                   rasterize, rle_decode, rle_encode, world_to_cell)
from .world import (Camera, Entity, Obstacle, Pose, StaticBehavior, World,
                    project_bbox, visibility)

ARCHETYPES = ("single_side", "double_side", "corridor")


@dataclass(frozen=True)
class ScenarioParams:
    room: float = 16.0
    obstacle_size: tuple = (1.6, 3.2)
    obstacle_height: tuple = (1.8, 2.6)
    max_obstacles: int = 8
    clutter: tuple = (0, 0)
    target_radius: float = 0.3
    target_height: float = 1.7
    resolution: float = 0.25
    max_retries: int = 1000
    plan_horizon: int = 16
    plan_radius: float = 3.0      # trajectory normalization scale
    crop_radius: float = 4.0      # egocentric occupancy window
    goal_visibility: float = 0.9
    max_start_visibility: float = 0.35    # accept only heavily occluded spawns
    inflate_cells: int = 2        # planning margin around obstacles (cells)
    n_rays: int = 16
    crop_size: int = 16
    fov_h: float = math.pi / 2
    image_w: int = 160
    image_h: int = 120
    cam_height: float = 1.0

    def camera(self, pose):
        return Camera(pose=pose, fov_h=self.fov_h, image_w=self.image_w,
                      image_h=self.image_h, cam_height=self.cam_height)


@dataclass(frozen=True)
class Scenario:
    archetype: str
    world: World
    chosen_obstacle: int
    target_edge: int
    tracker_pose: Pose
    target_pose: Pose
    target_visibility: float

    @property
    def target(self):
        return self.world.entities[0]


@dataclass
class PlanSample:
    id: int
    archetype: str
    randomized: bool
    pose: np.ndarray              # tracker (x, y, yaw)
    obs: np.ndarray               # flattened egocentric occupancy crop
    bbox: np.ndarray              # target box normalized by image dims
    traj: np.ndarray              # (T_p, 2) tracker-frame waypoints in [-1, 1]
    grid: OccupancyGrid = None


# edge normals indexed by edge id: 0 east, 1 north, 2 west, 3 south
_EDGE_NORMALS = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))


def _edge_point(center, half_ext, edge, frac):
    cx, cy = center
    hx, hy = half_ext
    nx, ny = _EDGE_NORMALS[edge]
    # tangent runs along the edge
    if edge in (0, 2):
        return cx + nx * hx, cy - hy + frac * 2.0 * hy
    return cx - hx + frac * 2.0 * hx, cy + ny * hy


def _make_box(center, half_ext, height):
    return Obstacle(xmin=center[0] - half_ext[0], ymin=center[1] - half_ext[1],
                    xmax=center[0] + half_ext[0], ymax=center[1] + half_ext[1],
                    height=height)


def _point_clear(x, y, radius, obstacles, room):
    if not (radius < x < room - radius and radius < y < room - radius):
        return False
    for ob in obstacles:
        if (ob.xmin - radius <= x <= ob.xmax + radius
                and ob.ymin - radius <= y <= ob.ymax + radius):
            return False
    return True


def _attempt(archetype, rng, p, size_jitter):
    room = p.room
    jitter = rng.uniform(0.75, 1.3) if size_jitter else 1.0

    def draw_half_ext():
        return (jitter * rng.uniform(*p.obstacle_size) / 2.0,
                jitter * rng.uniform(*p.obstacle_size) / 2.0)

    def draw_height():
        return rng.uniform(*p.obstacle_height)

    needed = {"single_side": 1, "double_side": 2, "corridor": 3}[archetype]
    if needed > p.max_obstacles:
        return None

    center = (rng.uniform(room * 0.3, room * 0.7),
              rng.uniform(room * 0.3, room * 0.7))
    half_ext = draw_half_ext()
    chosen = _make_box(center, half_ext, draw_height())
    obstacles = [chosen]

    edge = int(rng.integers(0, 4))
    frac = rng.uniform(0.3, 0.7)
    ex, ey = _edge_point(center, half_ext, edge, frac)
    nx, ny = _EDGE_NORMALS[edge]
    t_off = p.target_radius + rng.uniform(0.4, 0.9)
    target_xy = (ex + nx * t_off, ey + ny * t_off)

    adj = (edge + (1 if rng.random() < 0.5 else 3)) % 4
    afrac = rng.uniform(0.3, 0.7)
    ax, ay = _edge_point(center, half_ext, adj, afrac)
    anx, any_ = _EDGE_NORMALS[adj]
    tr_off = rng.uniform(1.0, 2.0)
    tracker_xy = (ax + anx * tr_off, ay + any_ * tr_off)

    if archetype == "double_side":
        # flank the target so only a frontal gap remains
        gap = rng.uniform(1.9, 2.6)
        flank_half = draw_half_ext()
        fx = target_xy[0] + nx * 0.0 + (abs(ny)) * (flank_half[0] + gap) * (
            1.0 if rng.random() < 0.5 else -1.0)
        fy = target_xy[1] + ny * 0.0 + (abs(nx)) * (flank_half[1] + gap) * (
            1.0 if rng.random() < 0.5 else -1.0)
        # push the flank outward along the edge normal so the target pocket stays open
        fx += nx * flank_half[0] * 0.5
        fy += ny * flank_half[1] * 0.5
        obstacles.append(_make_box((fx, fy), flank_half, draw_height()))
    elif archetype == "corridor":
        # left and right walls relative to the edge normal form the corridor mouth
        tangent = (-ny, nx)
        gap = rng.uniform(1.7, 2.3)
        for side in (1.0, -1.0):
            wall_half = ((abs(tangent[0]) * rng.uniform(0.5, 0.8)
                          + abs(nx) * rng.uniform(0.9, 1.6)),
                         (abs(tangent[1]) * rng.uniform(0.5, 0.8)
                          + abs(ny) * rng.uniform(0.9, 1.6)))
            wx = target_xy[0] + side * tangent[0] * (gap + wall_half[0] * 0.0) \
                + nx * rng.uniform(0.2, 0.8)
            wy = target_xy[1] + side * tangent[1] * (gap + wall_half[1] * 0.0) \
                + ny * rng.uniform(0.2, 0.8)
            # shift the wall body sideways so its inner face sits at the gap
            wx += side * tangent[0] * wall_half[0]
            wy += side * tangent[1] * wall_half[1]
            obstacles.append(_make_box((wx, wy), wall_half, draw_height()))

    n_clutter = int(rng.integers(p.clutter[0], p.clutter[1] + 1))
    for _ in range(n_clutter):
        if len(obstacles) >= p.max_obstacles:
            break
        c = (rng.uniform(room * 0.1, room * 0.9), rng.uniform(room * 0.1, room * 0.9))
        he = draw_half_ext()
        box = _make_box(c, he, draw_height())
        far_from_actors = all(
            not (box.xmin - 0.8 <= px <= box.xmax + 0.8
                 and box.ymin - 0.8 <= py <= box.ymax + 0.8)
            for px, py in (target_xy, tracker_xy))
        if far_from_actors:
            obstacles.append(box)

    if not _point_clear(*target_xy, p.target_radius, obstacles, room):
        return None
    if not _point_clear(*tracker_xy, 0.4, obstacles, room):
        return None

    yaw = math.atan2(target_xy[1] - tracker_xy[1], target_xy[0] - tracker_xy[0])
    tracker_pose = Pose(x=tracker_xy[0], y=tracker_xy[1], yaw=yaw)
    target_pose = Pose(x=target_xy[0], y=target_xy[1],
                       yaw=math.atan2(tracker_xy[1] - target_xy[1],
                                      tracker_xy[0] - target_xy[0]))
    target = Entity(pose=target_pose, radius=p.target_radius,
                    height=p.target_height, instance_id=0,
                    behavior=StaticBehavior())
    world = World(bounds=(0.0, 0.0, room, room), obstacles=obstacles,
                  entities=[target], tracker=tracker_pose)
    cam = p.camera(tracker_pose)
    vis = visibility(world, cam, target, n_rays=p.n_rays)
    if vis >= min(p.max_start_visibility, 1.0 - 1e-9):
        return None
    if project_bbox(cam, target) is None:
        return None
    return Scenario(archetype=archetype, world=world, chosen_obstacle=0,
                    target_edge=edge, tracker_pose=tracker_pose,
                    target_pose=target_pose, target_visibility=vis)


def sample_scenario(archetype, rng, params=None, size_jitter=False):
    """Rejection-sample one scenario; SamplingExhausted after max_retries."""
    if archetype not in ARCHETYPES:
        raise ValueError(f"unknown archetype {archetype!r}")
    p = params or ScenarioParams()
    for _ in range(p.max_retries):
        scenario = _attempt(archetype, rng, p, size_jitter)
        if scenario is not None:
            return scenario
    raise SamplingExhausted(
        f"no valid {archetype} scenario within {p.max_retries} attempts")


# --- expert paths and samples ---------------------------------------------------

def _nearest_free_cell(grid, row, col, max_ring=2):
    if is_free(grid, row, col):
        return row, col
    for ring in range(1, max_ring + 1):
        for dr in range(-ring, ring + 1):
            for dc in range(-ring, ring + 1):
                if max(abs(dr), abs(dc)) != ring:
                    continue
                if is_free(grid, row + dr, col + dc):
                    return row + dr, col + dc
    raise NoPath("no free cell near the tracker position")


def iter_recovery_goals(scenario, grid, params):
    """Free cells from which the target is (almost) fully visible, nearest
    to the tracker first: the minimal detour that regains sight. Dataset
    scenarios are heavily occluded, so this is a genuine walk around the
    occluder; a fully sighted spawn degenerates to staying put."""
    p = params
    target = scenario.target
    tx, ty = scenario.tracker_pose.x, scenario.tracker_pose.y
    free_rows, free_cols = np.nonzero(grid.occupied == 0)
    cx = grid.origin[0] + (free_cols + 0.5) * grid.resolution
    cy = grid.origin[1] + (free_rows + 0.5) * grid.resolution
    d2 = (cx - tx) ** 2 + (cy - ty) ** 2
    order = np.lexsort((free_cols, free_rows, d2))
    for idx in order:
        r, c = int(free_rows[idx]), int(free_cols[idx])
        x, y = cell_center(grid, r, c)
        probe = Camera(pose=Pose(x=x, y=y, yaw=0.0), cam_height=p.cam_height)
        if visibility(scenario.world, probe, target, n_rays=p.n_rays) >= p.goal_visibility:
            yield r, c


def smooth_on_grid(points, grid, passes=3):
    """Corner-cut smoothing that never leaves free cells of ``grid``.

    Endpoints stay fixed; an interior update is reverted when it lands
    on a blocked cell, so the path stays valid while losing A* zigzag.
    """
    pts = np.asarray(points, dtype=float).copy()
    if pts.shape[0] < 3:
        return pts
    for _ in range(passes):
        for i in range(1, pts.shape[0] - 1):
            cand = 0.25 * pts[i - 1] + 0.5 * pts[i] + 0.25 * pts[i + 1]
            r, c = world_to_cell(grid, cand[0], cand[1])
            if is_free(grid, r, c):
                pts[i] = cand
    return pts


def resample_polyline(points, count):
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] == 1:
        return np.tile(pts[0], (count, 1))
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] < 1e-12:
        return np.tile(pts[0], (count, 1))
    targets = np.linspace(0.0, s[-1], count)
    out = np.empty((count, 2))
    out[:, 0] = np.interp(targets, s, pts[:, 0])
    out[:, 1] = np.interp(targets, s, pts[:, 1])
    return out


def _to_tracker_frame(points, pose):
    pts = np.asarray(points, dtype=float) - np.array([pose.x, pose.y])
    cos_y, sin_y = math.cos(pose.yaw), math.sin(pose.yaw)
    fwd = cos_y * pts[:, 0] + sin_y * pts[:, 1]
    left = -sin_y * pts[:, 0] + cos_y * pts[:, 1]
    return np.stack([fwd, left], axis=1)


def encode_scenario(scenario, params=None):
    """(grid, obs crop, normalized bbox) for conditioning, expert-free."""
    p = params or ScenarioParams()
    grid = rasterize(scenario.world, p.resolution)
    obs = egocentric_crop(grid, scenario.tracker_pose,
                          size=p.crop_size, radius=p.crop_radius).ravel()
    cam = p.camera(scenario.tracker_pose)
    box = project_bbox(cam, scenario.target)
    if box is None:
        raise ValueError("scenario target does not project into the image")
    bbox = np.array([box[0] / p.image_w, box[1] / p.image_h,
                     box[2] / p.image_w, box[3] / p.image_h])
    return grid, obs, bbox


def inflate(grid, cells):
    """Dilate occupancy by ``cells`` so paths keep a physical margin."""
    if cells <= 0:
        return grid
    occ = grid.occupied.astype(bool)
    out = occ.copy()
    for dr in range(-cells, cells + 1):
        for dc in range(-cells, cells + 1):
            if dr == 0 and dc == 0:
                continue
            shifted = np.zeros_like(occ)
            r0, r1 = max(dr, 0), occ.shape[0] + min(dr, 0)
            c0, c1 = max(dc, 0), occ.shape[1] + min(dc, 0)
            shifted[r0:r1, c0:c1] = occ[r0 - dr:r1 - dr, c0 - dc:c1 - dc]
            out |= shifted
    return OccupancyGrid(resolution=grid.resolution, origin=grid.origin,
                         occupied=out.astype(np.uint8))


def make_sample(scenario, params=None, sample_id=0, randomized=False):
    """Expert trajectory via grid search toward the nearest viewing cell.

    Expert paths are planned on an obstacle grid inflated by the tracker
    radius so they keep physical clearance; samples are still validated
    against the raw grid.
    """
    p = params or ScenarioParams()
    grid, obs, bbox = encode_scenario(scenario, p)
    plan_grid = inflate(grid, p.inflate_cells)
    start = _nearest_free_cell(plan_grid, *world_to_cell(
        plan_grid, scenario.tracker_pose.x, scenario.tracker_pose.y))
    path = None
    for tries, goal in enumerate(iter_recovery_goals(scenario, plan_grid, p)):
        try:
            path = astar(plan_grid, start, goal)
            break
        except NoPath:
            if tries >= 40:
                break
            continue
    if path is None:
        raise NoPath("no reachable viewing cell for the expert path")
    world_pts = np.array([cell_center(grid, r, c) for r, c in path])
    world_pts = smooth_on_grid(world_pts, plan_grid)
    local = _to_tracker_frame(world_pts, scenario.tracker_pose)
    inside = np.max(np.abs(local), axis=1) <= p.plan_radius
    cut = int(np.argmin(inside)) if not inside.all() else local.shape[0]
    local = local[:max(cut, 1)]
    traj = resample_polyline(local, p.plan_horizon) / p.plan_radius
    traj = np.clip(traj, -1.0, 1.0)
    pose = np.array([scenario.tracker_pose.x, scenario.tracker_pose.y,
                     scenario.tracker_pose.yaw])
    return PlanSample(id=sample_id, archetype=scenario.archetype,
                      randomized=randomized, pose=pose, obs=obs, bbox=bbox,
                      traj=traj, grid=grid)


# --- dataset persistence ---------------------------------------------------------

@dataclass(frozen=True)
class DatasetInfo:
    path: str
    n: int
    n_randomized: int
    archetype_counts: dict
    sha256: str


def _sample_to_json(sample):
    doc = {
        "id": sample.id,
        "archetype": sample.archetype,
        "randomized": bool(sample.randomized),
        "pose": [float(v) for v in sample.pose],
        "obs": [float(v) for v in sample.obs],
        "bbox": [float(v) for v in sample.bbox],
        "traj": [[float(a), float(b)] for a, b in sample.traj],
        "grid": {
            "resolution": float(sample.grid.resolution),
            "w": sample.grid.width,
            "h": sample.grid.height,
            "rle": rle_encode(sample.grid.occupied),
        },
    }
    return json.dumps(doc)


def load_dataset(path, with_grids=True):
    samples = []
    with open(path) as fh:
        for line in fh:
            doc = json.loads(line)
            g = doc["grid"]
            grid = None
            if with_grids:
                grid = OccupancyGrid(resolution=float(g["resolution"]),
                                     origin=(0.0, 0.0),
                                     occupied=rle_decode(g["rle"], g["h"], g["w"]))
            samples.append(PlanSample(
                id=int(doc["id"]), archetype=doc["archetype"],
                randomized=bool(doc["randomized"]),
                pose=np.array(doc["pose"], dtype=float),
                obs=np.array(doc["obs"], dtype=float),
                bbox=np.array(doc["bbox"], dtype=float),
                traj=np.array(doc["traj"], dtype=float),
                grid=grid))
    return samples


def generate_dataset(n, randomized_fraction, seed, out_path, params=None,
                     max_attempts=50):
    """Write ``n`` samples, uniformly mixed over archetypes, to JSON Lines.

    The first round(n * randomized_fraction) sample ids carry obstacle
    size jitter plus occupancy bit-flip noise (p = 0.02). Deterministic
    per seed: every sample derives its own RNG stream from (seed, id,
    attempt).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= randomized_fraction <= 1.0:
        raise ValueError("randomized_fraction must lie in [0, 1]")
    p = params or ScenarioParams()
    n_randomized = int(round(n * randomized_fraction))
    counts = {a: 0 for a in ARCHETYPES}
    failures = []
    digest = hashlib.sha256()
    with open(out_path, "w") as fh:
        for i in range(n):
            archetype = ARCHETYPES[i % 3]
            randomized = i < n_randomized
            sample = None
            for attempt in range(max_attempts):
                rng = np.random.default_rng(
                    np.random.SeedSequence((seed, i, attempt)))
                try:
                    scenario = sample_scenario(archetype, rng, p,
                                               size_jitter=randomized)
                    sample = make_sample(scenario, p, sample_id=i,
                                         randomized=randomized)
                except (SamplingExhausted, NoPath):
                    continue
                if randomized:
                    flips = rng.random(sample.obs.shape[0]) < 0.02
                    sample.obs = np.abs(sample.obs - flips.astype(float))
                break
            if sample is None:
                failures.append(i)
                continue
            counts[archetype] += 1
            line = _sample_to_json(sample) + "\n"
            digest.update(line.encode())
            fh.write(line)
    if failures:
        raise SamplingExhausted(
            f"{len(failures)} of {n} samples failed after {max_attempts} "
            f"attempts each (ids {failures[:10]}{'...' if len(failures) > 10 else ''})")
    return DatasetInfo(path=str(out_path), n=n, n_randomized=n_randomized,
                       archetype_counts=counts, sha256=digest.hexdigest())
