"""Episode presets, world construction, agent variants, and batch evaluation."""

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .agent import AgentConfig, AgentRuntime, TrackingAgent
from .episode import EpisodeSetup, compute_metrics, correct_action_rate, run_episode
from .errors import NoEligibleSteps, SamplingExhausted
from .features import complement_directions, describe, generate_manifold_set
from .grid import rasterize
from .world import (ActionLimits, Camera, DescriptorContext, Entity,
                    EvaderBehavior, Obstacle, Pose, WandererBehavior, World,
                    line_of_sight, visibility, wrap_angle)


@dataclass(frozen=True)
class PresetConfig:
    name: str
    room: float = 16.0
    n_obstacles: tuple = (4, 6)
    obstacle_size: tuple = (1.6, 3.2)
    obstacle_height: tuple = (1.8, 2.6)
    obstacle_min_gap: float = 0.0     # min edge separation between obstacles
    n_distractors: int = 2
    target_behavior: str = "wander"
    target_speed: float = 0.25
    distractor_speed: float = 0.2
    evader_glide: float = 1.8         # hidden-walk budget (m)
    evader_hidden_frac: float = 0.7
    drift_rate: float = 0.0
    feature_noise: float = 0.02
    conf_noise: float = 0.05
    bbox_noise: float = 1.0
    outlier_rate: float = 0.0
    n_rays: int = 16
    dim: int = 64
    delta: float = 0.8
    eta: float = 0.2
    view_dirs: int = 4
    n_ref_views: int = 8
    d_star: float = 2.5
    d_max: float = 5.0
    fov_h: float = math.pi / 2
    image_w: int = 160
    image_h: int = 120
    cam_height: float = 1.0
    crop_size: int = 16
    plan_radius: float = 3.0
    crop_radius: float = 4.0
    resolution: float = 0.25
    spawn_dist: tuple = (2.5, 4.0)
    spawn_bearing: float = 0.5
    entity_radius: float = 0.3
    entity_height: float = 1.7


PRESETS = {
    "standard": PresetConfig(name="standard"),
    "occlusion_heavy": PresetConfig(
        name="occlusion_heavy",
        n_obstacles=(6, 9),
        obstacle_size=(1.8, 3.4),
        target_behavior="evade",
        target_speed=0.3,
        drift_rate=0.004,
    ),
    "distractor4": PresetConfig(
        name="distractor4",
        n_distractors=4,
        n_obstacles=(3, 5),
    ),
}

VARIANTS = {
    "full": {},
    "no_ema": {"use_ema": False},
    "avg_update": {"avg_update": True},
    "no_kf": {"use_kf": False},
    "linear_kf": {"confidence_aware": False},
    "no_planner_pid": {"use_planner": False},
    "planner_no_bbox": {"planner_use_bbox": False},
}

PLANNERLESS_VARIANTS = ("no_planner_pid",)


def variant_config(variant, base=None):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    return replace(base or AgentConfig(), **VARIANTS[variant])


@dataclass(frozen=True)
class RunConfig:
    preset: str = "standard"
    variant: str = "full"
    episodes: int = 100
    max_steps: int = 500
    lost_limit: int = 50
    seed: int = 0


def _clear_of_obstacles(x, y, radius, obstacles, bounds):
    xmin, ymin, xmax, ymax = bounds
    if not (xmin + radius < x < xmax - radius and ymin + radius < y < ymax - radius):
        return False
    for ob in obstacles:
        if (ob.xmin - radius <= x <= ob.xmax + radius
                and ob.ymin - radius <= y <= ob.ymax + radius):
            return False
    return True


def build_episode_setup(preset, seed):
    """Deterministic world + descriptor context + reference views for one episode."""
    if isinstance(preset, str):
        preset = PRESETS[preset]
    p = preset
    ss = np.random.SeedSequence((seed, 0x5EED))
    manifold_ss, drift_ss, world_ss, ref_ss = ss.spawn(4)
    k = 1 + p.n_distractors
    mset = generate_manifold_set(k, p.dim, p.delta, p.eta, p.view_dirs,
                                 seed=manifold_ss)
    drift_axes = {}
    if p.drift_rate > 0.0:
        axes = complement_directions(mset, k, seed=drift_ss)
        drift_axes = {i: axes[i] for i in range(k)}
    rng = np.random.default_rng(world_ss)
    bounds = (0.0, 0.0, p.room, p.room)

    for _ in range(200):
        n_obs = int(rng.integers(p.n_obstacles[0], p.n_obstacles[1] + 1))
        obstacles = []
        for _ in range(n_obs * 8):
            if len(obstacles) >= n_obs:
                break
            w = rng.uniform(*p.obstacle_size)
            h = rng.uniform(*p.obstacle_size)
            cx = rng.uniform(p.room * 0.12, p.room * 0.88)
            cy = rng.uniform(p.room * 0.12, p.room * 0.88)
            box = Obstacle(xmin=cx - w / 2, ymin=cy - h / 2, xmax=cx + w / 2,
                           ymax=cy + h / 2, height=rng.uniform(*p.obstacle_height))
            if p.obstacle_min_gap > 0.0 and any(
                    box.xmin - p.obstacle_min_gap < o.xmax
                    and box.xmax + p.obstacle_min_gap > o.xmin
                    and box.ymin - p.obstacle_min_gap < o.ymax
                    and box.ymax + p.obstacle_min_gap > o.ymin
                    for o in obstacles):
                continue
            obstacles.append(box)

        tx = rng.uniform(p.room * 0.15, p.room * 0.85)
        ty = rng.uniform(p.room * 0.15, p.room * 0.85)
        tyaw = rng.uniform(-math.pi, math.pi)
        if not _clear_of_obstacles(tx, ty, 0.5, obstacles, bounds):
            continue
        tracker = Pose(x=tx, y=ty, yaw=tyaw)

        d = rng.uniform(*p.spawn_dist)
        b = rng.uniform(-p.spawn_bearing, p.spawn_bearing)
        gx = tx + d * math.cos(tyaw + b)
        gy = ty + d * math.sin(tyaw + b)
        if not _clear_of_obstacles(gx, gy, p.entity_radius + 0.2, obstacles, bounds):
            continue
        target_pose = Pose(x=gx, y=gy, yaw=rng.uniform(-math.pi, math.pi))
        behavior = (EvaderBehavior(speed=p.target_speed,
                                   cam_height=p.cam_height,
                                   hidden_speed_frac=p.evader_hidden_frac,
                                   hidden_walk_budget=p.evader_glide)
                    if p.target_behavior == "evade"
                    else WandererBehavior(speed=p.target_speed))
        target = Entity(pose=target_pose, radius=p.entity_radius,
                        height=p.entity_height, instance_id=0, behavior=behavior)
        world = World(bounds=bounds, obstacles=obstacles, entities=[target],
                      tracker=tracker, rng=rng)
        camera = Camera(pose=tracker, fov_h=p.fov_h, image_w=p.image_w,
                        image_h=p.image_h, cam_height=p.cam_height)
        if visibility(world, camera, target, n_rays=p.n_rays) < 0.7:
            continue

        distractors = []
        ok = True
        for i in range(p.n_distractors):
            placed = False
            for _ in range(100):
                dd = rng.uniform(2.0, 5.5)
                db = rng.uniform(-0.7, 0.7)
                dx = tx + dd * math.cos(tyaw + db)
                dy = ty + dd * math.sin(tyaw + db)
                if not _clear_of_obstacles(dx, dy, p.entity_radius + 0.2,
                                           obstacles, bounds):
                    continue
                if math.hypot(dx - gx, dy - gy) < 1.2:
                    continue
                distractors.append(Entity(
                    pose=Pose(x=dx, y=dy, yaw=rng.uniform(-math.pi, math.pi)),
                    radius=p.entity_radius, height=p.entity_height,
                    instance_id=1 + i,
                    behavior=WandererBehavior(speed=p.distractor_speed)))
                placed = True
                break
            if not placed:
                ok = False
                break
        if not ok:
            continue
        world.entities.extend(distractors)

        ctx = DescriptorContext(
            manifolds={m.instance_id: m for m in mset.manifolds},
            feature_noise=p.feature_noise,
            conf_noise=p.conf_noise,
            bbox_noise=p.bbox_noise,
            outlier_rate=p.outlier_rate,
            drift_rate=p.drift_rate,
            drift_axes=drift_axes,
            grid=rasterize(world, p.resolution),
            crop_size=p.crop_size,
            crop_radius=p.crop_radius,
            n_rays=p.n_rays,
        )
        ref_rng = np.random.default_rng(ref_ss)
        view = wrap_angle(math.atan2(ty - gy, tx - gx) - target_pose.yaw)
        manifold0 = mset[0]
        ref_views = [describe(manifold0, view, p.feature_noise, ref_rng)]
        for i in range(p.n_ref_views):
            ref_views.append(describe(
                manifold0, view + 2.0 * math.pi * i / p.n_ref_views,
                p.feature_noise, ref_rng))
        return EpisodeSetup(
            world=world, ctx=ctx, target_id=0, ref_views=ref_views,
            camera_kwargs={"fov_h": p.fov_h, "image_w": p.image_w,
                           "image_h": p.image_h, "cam_height": p.cam_height},
            reward_kwargs={"d_star": p.d_star, "d_max": p.d_max,
                           "theta_max": p.fov_h / 2.0},
            limits=ActionLimits(),
        )
    raise SamplingExhausted(f"could not build a valid world for seed {seed}")


@dataclass
class BatchResult:
    logs: list
    metrics: object
    car: float
    scenario: str
    seed: int

    def csv_row(self):
        car = "" if self.car is None else f"{self.car:.6f}"
        return [self.scenario, f"{self.metrics.ar:.6f}", f"{self.metrics.el:.6f}",
                f"{self.metrics.sr:.6f}", f"{self.metrics.tsr:.6f}", car,
                str(self.metrics.episodes), str(self.seed)]


METRICS_HEADER = ["scenario", "AR", "EL", "SR", "TSR", "CAR", "episodes", "seed"]


def run_batch(run_config, agent_config=None, predictor=None, schedule=None,
              plan_horizon=16):
    """Run seeded episodes for one preset/variant and aggregate metrics."""
    rc = run_config
    preset = PRESETS[rc.preset] if isinstance(rc.preset, str) else rc.preset
    cfg = variant_config(rc.variant, agent_config)
    logs = []
    for i in range(rc.episodes):
        ep_seed = rc.seed + i
        setup = build_episode_setup(preset, ep_seed)
        runtime = AgentRuntime(
            image_w=preset.image_w, image_h=preset.image_h,
            limits=setup.limits,
            predictor=None if rc.variant in PLANNERLESS_VARIANTS else predictor,
            schedule=None if rc.variant in PLANNERLESS_VARIANTS else schedule,
            plan_horizon=plan_horizon, plan_radius=preset.plan_radius)
        agent = TrackingAgent(cfg, runtime)
        logs.append(run_episode(agent, setup, max_steps=rc.max_steps,
                                lost_limit=rc.lost_limit, seed=ep_seed))
    metrics = compute_metrics(logs, horizon=rc.max_steps)
    cars = []
    for log in logs:
        try:
            cars.append(correct_action_rate(log, image_w=preset.image_w))
        except NoEligibleSteps:
            continue
    car = float(np.mean(cars)) if cars else None
    return BatchResult(logs=logs, metrics=metrics, car=car,
                       scenario=f"{preset.name}/{rc.variant}", seed=rc.seed)


def metrics_csv(results):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for res in results:
        writer.writerow(res.csv_row())
    return buf.getvalue()
