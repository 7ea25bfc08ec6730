"""Episode mechanics: the render/act/step loop, logs, and the metric suite."""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyLogs, NoEligibleSteps
from .world import Action, Camera, render, reward, step_world


@dataclass(frozen=True)
class StepRecord:
    step: int
    tracker_pose: tuple
    target_pose: tuple
    action: tuple                 # (v_f, v_l, v_v, omega_y)
    reward: float
    target_visible: bool
    bbox: tuple = None            # observed target box [cx, cy, w, h] or None
    confidence: float = 0.0


@dataclass
class EpisodeLog:
    records: list = field(default_factory=list)
    seed: int = 0
    error: str = None

    @property
    def length(self):
        return len(self.records)

    @property
    def total_reward(self):
        return float(sum(r.reward for r in self.records))

    @property
    def visible_fraction(self):
        if not self.records:
            return 0.0
        return sum(1 for r in self.records if r.target_visible) / len(self.records)


@dataclass(frozen=True)
class Metrics:
    ar: float
    el: float
    sr: float
    tsr: float
    episodes: int


@dataclass
class EpisodeSetup:
    """Everything an episode loop needs beyond the agent itself."""

    world: object
    ctx: object
    target_id: int
    ref_views: list
    camera_kwargs: dict = field(default_factory=dict)
    reward_kwargs: dict = field(default_factory=dict)
    limits: object = None


def run_episode(agent, setup, max_steps=500, lost_limit=50, seed=0):
    """Loop render -> agent -> step_world until the horizon or the target
    stays out of view for more than ``lost_limit`` consecutive steps.

    Agent exceptions abort the episode; the log keeps the error string so
    the batch counts it as a failure.
    """
    if max_steps < 1 or lost_limit < 1:
        raise ValueError("max_steps and lost_limit must be >= 1")
    world = setup.world
    log = EpisodeLog(seed=seed)
    agent.reset(setup.ref_views, np.random.default_rng(seed))
    consecutive_lost = 0
    for step_idx in range(max_steps):
        camera = Camera(pose=world.tracker, **setup.camera_kwargs)
        obs = render(world, camera, setup.ctx)
        target = next((c for c in obs.candidates
                       if c.instance_id == setup.target_id), None)
        visible = target is not None
        try:
            action = agent.act(obs)
        except Exception as exc:  # noqa: BLE001 - agent faults are episode data
            log.error = f"{type(exc).__name__}: {exc}"
            action = Action()
        target_entity = next(e for e in world.entities
                             if e.instance_id == setup.target_id)
        rew = reward(world.tracker, target_entity.pose, **setup.reward_kwargs)
        log.records.append(StepRecord(
            step=step_idx,
            tracker_pose=(world.tracker.x, world.tracker.y, world.tracker.yaw),
            target_pose=(target_entity.pose.x, target_entity.pose.y,
                         target_entity.pose.yaw),
            action=(action.v_f, action.v_l, action.v_v, action.omega_y),
            reward=rew,
            target_visible=visible,
            bbox=tuple(float(v) for v in target.bbox) if visible else None,
            confidence=float(target.confidence) if visible else 0.0,
        ))
        if log.error is not None:
            break
        consecutive_lost = 0 if visible else consecutive_lost + 1
        if consecutive_lost > lost_limit:
            break
        world = step_world(world, action, limits=setup.limits)
    return log


MIN_FOLLOW_FRACTION = 0.5


def _success(log, horizon):
    """Reaching the horizon only counts when the agent was actually
    following: the target must have been in view for at least half the
    steps, not merely glimpsed often enough to keep the lost-clock alive."""
    return (log.length >= horizon and log.error is None
            and log.visible_fraction >= MIN_FOLLOW_FRACTION)


def compute_metrics(logs, horizon=500, tsr_horizon=1500):
    """AR/EL/SR aggregates; TSR uses the long-run horizon."""
    if not logs:
        raise EmptyLogs("no episode logs supplied")
    ok = [log for log in logs]
    ar = float(np.mean([log.total_reward for log in ok]))
    el = float(np.mean([log.length for log in ok]))
    sr = float(np.mean([1.0 if _success(log, horizon) else 0.0 for log in ok]))
    tsr = float(np.mean([1.0 if _success(log, tsr_horizon) else 0.0 for log in ok]))
    return Metrics(ar=ar, el=el, sr=sr, tsr=tsr, episodes=len(ok))


def correct_action_rate(log, dead_zone_px=8, image_w=160, lateral_weight=0.2):
    """Fraction of off-center steps whose action pushes the target centerward.

    Yaw dominates; lateral velocity contributes with weight
    ``lateral_weight``. Steps without an observed box or inside the dead
    zone are ineligible.
    """
    eligible = 0
    correct = 0
    for rec in log.records:
        if rec.bbox is None:
            continue
        offset = rec.bbox[0] - image_w / 2.0
        if abs(offset) <= dead_zone_px:
            continue
        eligible += 1
        steer = rec.action[3] + lateral_weight * rec.action[1]
        if steer * offset > 0.0:
            correct += 1
    if eligible == 0:
        raise NoEligibleSteps("every step sits inside the dead zone")
    return correct / eligible


# --- persistence ---------------------------------------------------------------

def episode_to_jsonl(log):
    """One JSON line per step (poses, action, reward, visibility, box)."""
    lines = []
    for rec in log.records:
        doc = {
            "step": rec.step,
            "tracker_pose": [float(v) for v in rec.tracker_pose],
            "target_pose": [float(v) for v in rec.target_pose],
            "action": [float(v) for v in rec.action],
            "reward": float(rec.reward),
            "target_visible": bool(rec.target_visible),
            "bbox": [float(v) for v in rec.bbox] if rec.bbox is not None else None,
            "confidence": float(rec.confidence),
        }
        lines.append(json.dumps(doc))
    return lines


def write_episodes_jsonl(path, logs):
    with open(path, "w") as fh:
        for log in logs:
            for line in episode_to_jsonl(log):
                fh.write(line + "\n")


def read_episodes_jsonl(path):
    """Rebuild step-record dictionaries (grouped by descending step resets)."""
    episodes = []
    current = []
    with open(path) as fh:
        for line in fh:
            doc = json.loads(line)
            if doc["step"] == 0 and current:
                episodes.append(current)
                current = []
            current.append(doc)
    if current:
        episodes.append(current)
    return episodes
