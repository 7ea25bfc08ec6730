"""Planar world: pinhole box projection, ray-cast occlusion, motion.

Conventions used throughout the package:

* world yaw is standard CCW radians; the camera looks along
  (cos yaw, sin yaw);
* ``Action.omega_y`` is positive for a RIGHT turn (clockwise), so
  integration applies ``yaw -= omega_y``;
* ``Action.v_l`` is positive to the RIGHT;
* image u grows rightward, so a target right of center has u > W/2 and
  a positive yaw action reduces the offset.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .features import describe


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float


@dataclass(frozen=True)
class Obstacle:
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    height: float

    @property
    def center(self):
        return (self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0

    @property
    def half_extents(self):
        return (self.xmax - self.xmin) / 2.0, (self.ymax - self.ymin) / 2.0


@dataclass
class Entity:
    pose: Pose
    radius: float
    height: float
    instance_id: int
    category: str = "person"
    behavior: object = None


@dataclass(frozen=True)
class Camera:
    pose: Pose
    fov_h: float = math.pi / 2
    image_w: int = 160
    image_h: int = 120
    cam_height: float = 1.0

    @property
    def focal(self):
        return (self.image_w / 2.0) / math.tan(self.fov_h / 2.0)


@dataclass(frozen=True)
class Action:
    v_f: float = 0.0
    v_l: float = 0.0
    v_v: float = 0.0
    omega_y: float = 0.0


@dataclass(frozen=True)
class ActionLimits:
    v_max: float = 0.4            # m/step for each linear component
    omega_max: float = 0.2        # rad/step


def clamp_action(action, limits):
    """Clamp to the configured maxima; vertical motion is disabled in 2D."""
    return Action(
        v_f=min(max(action.v_f, -limits.v_max), limits.v_max),
        v_l=min(max(action.v_l, -limits.v_max), limits.v_max),
        v_v=0.0,
        omega_y=min(max(action.omega_y, -limits.omega_max), limits.omega_max),
    )


@dataclass
class World:
    bounds: tuple                 # (xmin, ymin, xmax, ymax)
    obstacles: list
    entities: list
    tracker: Pose
    time_step: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def obstacle_array(self):
        if not self.obstacles:
            return np.zeros((0, 5))
        return np.array([[o.xmin, o.ymin, o.xmax, o.ymax, o.height]
                         for o in self.obstacles])


def wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def project_bbox(camera, entity):
    """Pinhole image box [cx, cy, w, h] of the entity's bounding cylinder.

    None when the entity is behind the camera or the clipped box is empty.
    """
    dx = entity.pose.x - camera.pose.x
    dy = entity.pose.y - camera.pose.y
    cos_y, sin_y = math.cos(camera.pose.yaw), math.sin(camera.pose.yaw)
    fwd = cos_y * dx + sin_y * dy
    right = sin_y * dx - cos_y * dy
    if fwd <= 1e-9:
        return None
    focal = camera.focal
    u = camera.image_w / 2.0 + focal * (right / fwd)
    half_w = focal * entity.radius / fwd
    v_top = camera.image_h / 2.0 - focal * (entity.height - camera.cam_height) / fwd
    v_bot = camera.image_h / 2.0 + focal * camera.cam_height / fwd
    u0 = max(u - half_w, 0.0)
    u1 = min(u + half_w, float(camera.image_w))
    v0 = max(v_top, 0.0)
    v1 = min(v_bot, float(camera.image_h))
    if u1 - u0 <= 0.0 or v1 - v0 <= 0.0:
        return None
    return np.array([(u0 + u1) / 2.0, (v0 + v1) / 2.0, u1 - u0, v1 - v0])


def visibility(world, camera, entity, n_rays=16):
    """Unoccluded fraction of rays to points across the entity silhouette.

    Sample points span the perpendicular diameter at half the entity
    height; a ray is blocked when an obstacle taller than the ray's
    interpolated height crosses it.
    """
    if n_rays < 1:
        raise ValueError("n_rays must be >= 1")
    boxes = world.obstacle_array()
    dx = entity.pose.x - camera.pose.x
    dy = entity.pose.y - camera.pose.y
    dist = math.hypot(dx, dy)
    if dist < 1e-9:
        px, py = 1.0, 0.0
    else:
        px, py = -dy / dist, dx / dist
    offsets = np.linspace(-1.0, 1.0, n_rays) if n_rays > 1 else np.array([0.0])
    pts = np.empty((n_rays, 3))
    pts[:, 0] = entity.pose.x + offsets * entity.radius * px
    pts[:, 1] = entity.pose.y + offsets * entity.radius * py
    pts[:, 2] = entity.height / 2.0
    cam = np.array([camera.pose.x, camera.pose.y, camera.cam_height])
    return float(kernels.clear_fraction(cam, pts, boxes))


def line_of_sight(world, camera, entity):
    """Single center ray variant of ``visibility``."""
    boxes = world.obstacle_array()
    return bool(kernels.segment_clear(
        camera.pose.x, camera.pose.y, camera.cam_height,
        entity.pose.x, entity.pose.y, entity.height / 2.0, boxes))


@dataclass(frozen=True)
class Candidate:
    """One detected entity in a frame.

    ``instance_id`` is simulator ground truth carried for logging and
    metrics; agent policies must only consume bbox/feature/confidence.
    """

    bbox: np.ndarray
    instance_id: int
    category: str
    visibility: float
    feature: np.ndarray
    confidence: float


@dataclass(frozen=True)
class Observation:
    step: int
    candidates: tuple
    occupancy_crop: np.ndarray = None


@dataclass
class DescriptorContext:
    """Per-episode rendering state: manifolds, noise model, drift, planner view.

    ``drift_rate`` spins each instance's mean direction inside a dedicated
    plane (its own drift axis), modeling slow appearance change. Drift
    axes are orthogonal to every manifold, so cross-instance separation
    bounds survive unchanged while a frozen prototype slowly dealigns.
    """

    manifolds: dict                     # instance_id -> InstanceManifold
    feature_noise: float = 0.0
    conf_noise: float = 0.0
    bbox_noise: float = 0.0
    outlier_rate: float = 0.0           # chance of a grossly wrong box
    drift_rate: float = 0.0
    drift_axes: dict = field(default_factory=dict)
    grid: object = None                 # static OccupancyGrid for crops
    crop_size: int = 16
    crop_radius: float = 4.0
    n_rays: int = 16

    def drifted_mean(self, instance_id, t):
        manifold = self.manifolds[instance_id]
        axis = self.drift_axes.get(instance_id)
        if self.drift_rate <= 0.0 or axis is None:
            return None
        phi = min(self.drift_rate * t, math.pi / 2.0)
        return math.cos(phi) * manifold.mean_direction + math.sin(phi) * axis

    def feature(self, entity, view_angle, t, rng):
        manifold = self.manifolds[entity.instance_id]
        return describe(manifold, view_angle, noise_scale=self.feature_noise,
                        seed=rng, mean_override=self.drifted_mean(entity.instance_id, t))


def render(world, camera, ctx):
    """One candidate per entity that projects into the image and is partly visible."""
    from .grid import egocentric_crop

    rng = world.rng
    candidates = []
    for entity in world.entities:
        vis = visibility(world, camera, entity, n_rays=ctx.n_rays)
        if vis <= 0.0:
            continue
        box = project_bbox(camera, entity)
        if box is None:
            continue
        outlier = ctx.outlier_rate > 0.0 and rng.random() < ctx.outlier_rate
        if outlier:
            # detector glitch: a grossly displaced, rescaled box whose
            # degraded confidence is what a confidence-aware filter keys on
            box = box + np.concatenate([rng.uniform(-40.0, 40.0, 2),
                                        box[2:] * rng.uniform(-0.5, 1.0, 2)])
        if ctx.bbox_noise > 0.0 or outlier:
            box = box + rng.normal(0.0, max(ctx.bbox_noise, 0.1), 4)
            box[0] = min(max(box[0], 0.0), float(camera.image_w))
            box[1] = min(max(box[1], 0.0), float(camera.image_h))
            box[2] = min(max(box[2], 0.1), float(camera.image_w))
            box[3] = min(max(box[3], 0.1), float(camera.image_h))
        view_angle = wrap_angle(
            math.atan2(camera.pose.y - entity.pose.y,
                       camera.pose.x - entity.pose.x) - entity.pose.yaw)
        feature = ctx.feature(entity, view_angle, world.time_step, rng)
        conf = vis
        if ctx.conf_noise > 0.0:
            conf = conf + rng.normal(0.0, ctx.conf_noise)
        if outlier:
            conf = conf * rng.uniform(0.45, 0.8)
        conf = min(max(conf, 0.0), 1.0)
        candidates.append(Candidate(
            bbox=box, instance_id=entity.instance_id, category=entity.category,
            visibility=vis, feature=feature, confidence=conf))
    crop = None
    if ctx.grid is not None:
        crop = egocentric_crop(ctx.grid, camera.pose,
                               size=ctx.crop_size, radius=ctx.crop_radius)
    return Observation(step=world.time_step, candidates=tuple(candidates),
                       occupancy_crop=crop)


# --- motion -------------------------------------------------------------------

def integrate_pose(pose, action):
    """Body-frame kinematics shared by the simulator and the plan previewer."""
    cos_y, sin_y = math.cos(pose.yaw), math.sin(pose.yaw)
    x = pose.x + action.v_f * cos_y + action.v_l * sin_y
    y = pose.y + action.v_f * sin_y - action.v_l * cos_y
    return Pose(x=x, y=y, yaw=wrap_angle(pose.yaw - action.omega_y))


def _sweep_limit(x0, y0, x1, y1, box, radius):
    """Earliest param t in [0, 1] at which the swept circle touches the box.

    Uses the radius-expanded footprint (conservative at corners), so a
    returned t < 1 guarantees contact no later than t.
    """
    bx0, by0 = box.xmin - radius, box.ymin - radius
    bx1, by1 = box.xmax + radius, box.ymax + radius
    t0, t1 = 0.0, 1.0
    dx, dy = x1 - x0, y1 - y0
    if abs(dx) > 1e-12:
        ta, tb = (bx0 - x0) / dx, (bx1 - x0) / dx
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
    elif x0 < bx0 or x0 > bx1:
        return 1.0
    if abs(dy) > 1e-12:
        ta, tb = (by0 - y0) / dy, (by1 - y0) / dy
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
    elif y0 < by0 or y0 > by1:
        return 1.0
    if t0 > t1:
        return 1.0
    return t0


def move_with_collision(pos, target, radius, obstacles, bounds):
    """Move a disc toward ``target``, stopping at the first obstacle contact."""
    xmin, ymin, xmax, ymax = bounds
    tx = min(max(target[0], xmin + radius), xmax - radius)
    ty = min(max(target[1], ymin + radius), ymax - radius)
    x0, y0 = pos
    t_hit = 1.0
    for box in obstacles:
        t = _sweep_limit(x0, y0, tx, ty, box, radius)
        if t < t_hit:
            t_hit = t
    if t_hit < 1.0:
        t_hit = max(t_hit - 1e-6, 0.0)
    return x0 + t_hit * (tx - x0), y0 + t_hit * (ty - y0)


def _advance_entity(entity, world, rng):
    if entity.behavior is None:
        return entity
    goal = entity.behavior.propose(entity, world, rng)
    if getattr(entity.behavior, "teleport", False):
        return replace_entity(entity, goal)
    nx, ny = move_with_collision((entity.pose.x, entity.pose.y),
                                 (goal.x, goal.y), entity.radius,
                                 world.obstacles, world.bounds)
    if (nx, ny) == (entity.pose.x, entity.pose.y) and hasattr(entity.behavior, "slide"):
        # axis-projected fallback keeps wanderers from pinning on walls
        for alt in ((goal.x, entity.pose.y), (entity.pose.x, goal.y)):
            nx, ny = move_with_collision((entity.pose.x, entity.pose.y), alt,
                                         entity.radius, world.obstacles, world.bounds)
            if (nx, ny) != (entity.pose.x, entity.pose.y):
                break
    return replace_entity(entity, Pose(x=nx, y=ny, yaw=goal.yaw))


def replace_entity(entity, pose):
    return Entity(pose=pose, radius=entity.radius, height=entity.height,
                  instance_id=entity.instance_id, category=entity.category,
                  behavior=entity.behavior)


TRACKER_RADIUS = 0.3


def step_world(world, tracker_action, limits=None, dt=1.0):
    """Advance tracker then entities one step; deterministic per world RNG."""
    limits = limits or ActionLimits()
    action = clamp_action(tracker_action, limits)
    desired = integrate_pose(world.tracker, action)
    nx, ny = move_with_collision((world.tracker.x, world.tracker.y),
                                 (desired.x, desired.y), TRACKER_RADIUS,
                                 world.obstacles, world.bounds)
    tracker = Pose(x=nx, y=ny, yaw=desired.yaw)
    entities = [_advance_entity(e, world, world.rng) for e in world.entities]
    return World(bounds=world.bounds, obstacles=world.obstacles,
                 entities=entities, tracker=tracker,
                 time_step=world.time_step + 1, rng=world.rng)


def reward(tracker_pose, target_pose, d_star=2.5, d_max=5.0, theta_max=math.pi / 4):
    """1 at perfect station-keeping, linearly penalized in range and bearing."""
    if d_max <= 0 or theta_max <= 0:
        raise ValueError("d_max and theta_max must be > 0")
    dx = target_pose.x - tracker_pose.x
    dy = target_pose.y - tracker_pose.y
    d = math.hypot(dx, dy)
    bearing = wrap_angle(math.atan2(dy, dx) - tracker_pose.yaw)
    r = 1.0 - abs(d - d_star) / d_max - abs(bearing) / theta_max
    return float(min(max(r, -1.0), 1.0))


# --- behaviors ----------------------------------------------------------------

class StaticBehavior:
    def propose(self, entity, world, rng):
        return entity.pose


class ScriptedBehavior:
    """Pose schedule indexed by the post-step time; clamps at the last entry.

    Poses are applied verbatim (no collision sweep) so tests can stage
    exact visibility timelines.
    """

    teleport = True

    def __init__(self, poses):
        self.poses = list(poses)

    def propose(self, entity, world, rng):
        idx = min(world.time_step + 1, len(self.poses) - 1)
        return self.poses[idx]


class WandererBehavior:
    """Walks toward uniformly resampled goals inside the world bounds."""

    slide = True

    def __init__(self, speed=0.25, goal_tol=0.4, margin=1.0):
        self.speed = speed
        self.goal_tol = goal_tol
        self.margin = margin
        self.goal = None

    def propose(self, entity, world, rng):
        xmin, ymin, xmax, ymax = world.bounds
        if self.goal is None or math.hypot(self.goal[0] - entity.pose.x,
                                           self.goal[1] - entity.pose.y) < self.goal_tol:
            self.goal = (rng.uniform(xmin + self.margin, xmax - self.margin),
                         rng.uniform(ymin + self.margin, ymax - self.margin))
        dx = self.goal[0] - entity.pose.x
        dy = self.goal[1] - entity.pose.y
        d = math.hypot(dx, dy)
        step = min(self.speed, d)
        if d < 1e-9:
            return entity.pose
        yaw = math.atan2(dy, dx)
        return Pose(x=entity.pose.x + step * dx / d,
                    y=entity.pose.y + step * dy / d, yaw=yaw)


class EvaderBehavior:
    """Runs for the shadow of the nearest obstacle, glides a short way
    deeper once hidden, then holds.

    While the tracker holds line of sight the evader flees toward the
    obstacle's far side. Hidden, it keeps walking its heading for up to
    ``hidden_walk_budget`` meters (so motion prediction stays relevant
    through the occlusion) and then waits; a recovery detour aimed near
    the vanish point can therefore actually find it.
    """

    slide = True

    def __init__(self, speed=0.3, standoff=0.6, cam_height=1.0,
                 hidden_speed_frac=0.7, hidden_walk_budget=1.8):
        self.speed = speed
        self.standoff = standoff
        self.cam_height = cam_height
        self.hidden_speed_frac = hidden_speed_frac
        self.hidden_walk_budget = hidden_walk_budget
        self._hidden_walked = 0.0

    def propose(self, entity, world, rng):
        if not world.obstacles:
            return entity.pose
        probe = Camera(pose=world.tracker, cam_height=self.cam_height)
        if not line_of_sight(world, probe, entity):
            if self._hidden_walked >= self.hidden_walk_budget:
                return entity.pose
            step = self.speed * self.hidden_speed_frac
            self._hidden_walked += step
            return Pose(x=entity.pose.x + step * math.cos(entity.pose.yaw),
                        y=entity.pose.y + step * math.sin(entity.pose.yaw),
                        yaw=entity.pose.yaw)
        self._hidden_walked = 0.0
        ex, ey = entity.pose.x, entity.pose.y
        best = min(world.obstacles,
                   key=lambda o: (o.center[0] - ex) ** 2 + (o.center[1] - ey) ** 2)
        ox, oy = best.center
        hx, hy = best.half_extents
        tx, ty = world.tracker.x, world.tracker.y
        away = np.array([ox - tx, oy - ty])
        n = np.linalg.norm(away)
        if n < 1e-9:
            away = np.array([1.0, 0.0])
        else:
            away = away / n
        hide = (ox + away[0] * (hx + entity.radius + self.standoff),
                oy + away[1] * (hy + entity.radius + self.standoff))
        dx, dy = hide[0] - ex, hide[1] - ey
        d = math.hypot(dx, dy)
        if d < 0.2:
            return entity.pose
        step = min(self.speed, d)
        yaw = math.atan2(dy, dx)
        return Pose(x=ex + step * dx / d, y=ey + step * dy / d, yaw=yaw)
