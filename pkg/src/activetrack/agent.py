"""Tracking policy: detect by prototype matching, track through a gated
Kalman filter with online prototype enhancement, and hand off to the
trajectory planner after a sustained low-confidence stretch."""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimator
from .diffusion import Condition, sample_plan
from .errors import ActiveTrackError
from .features import (Prototype, cosine_similarity, ema_update,
                       init_prototype, match_candidates, unit)
from .world import Action, ActionLimits, Pose, clamp_action, integrate_pose

DETECT = "DETECT"
TRACK = "TRACK"
PLAN = "PLAN"


@dataclass(frozen=True)
class AgentConfig:
    eta_s: float = 0.5            # matching threshold
    eta_c: float = 0.5            # confidence gate for filter updates
    beta: float = 0.8             # prototype EMA momentum
    lam: float = 15.0             # confidence-noise slope
    gamma: float = 0.4            # confidence-noise center
    trigger_len: int = 10         # low-confidence steps before planning
    kp_yaw: float = 0.6
    kd_yaw: float = 0.1
    kp_fwd: float = 0.8
    kd_fwd: float = 0.1
    height_setpoint_frac: float = 0.45
    search_rate: float = 0.2      # rad/step rotation while detecting
    plan_exec_len: int = 16
    plan_scan_len: int = 20       # rotate-in-place ticks after a plan completes
    replan_budget: int = 3
    lookahead: int = 3
    q_noise: float = 1e-5
    fixed_sigma2: float = 0.5
    # ablation switches
    use_ema: bool = True
    avg_update: bool = False
    use_kf: bool = True
    confidence_aware: bool = True
    use_planner: bool = True
    planner_use_bbox: bool = True

    def kf_config(self):
        return estimator.KfConfig(Q=self.q_noise * np.eye(8), lam=self.lam,
                                  gamma=self.gamma, eta_c=self.eta_c,
                                  confidence_aware=self.confidence_aware,
                                  fixed_sigma2=self.fixed_sigma2)

    @classmethod
    def from_file(cls, path):
        """Plain key=value lines; unknown keys are rejected."""
        values = {}
        with open(path) as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, _, val = line.partition("=")
                key = key.strip()
                val = val.strip()
                if key not in _CONFIG_TYPES:
                    raise ValueError(f"unknown agent config key {key!r}")
                values[key] = _parse_config_value(key, val)
        return cls(**values)


_CONFIG_TYPES = {
    "eta_s": float, "eta_c": float, "beta": float, "lam": float, "gamma": float,
    "trigger_len": int, "kp_yaw": float, "kd_yaw": float, "kp_fwd": float,
    "kd_fwd": float, "height_setpoint_frac": float, "search_rate": float,
    "plan_exec_len": int, "replan_budget": int, "lookahead": int,
    "q_noise": float, "fixed_sigma2": float,
    "use_ema": bool, "avg_update": bool, "use_kf": bool,
    "confidence_aware": bool, "use_planner": bool, "planner_use_bbox": bool,
}


def _parse_config_value(key, val):
    typ = _CONFIG_TYPES[key]
    if typ is bool:
        if val.lower() in ("1", "true", "yes", "on"):
            return True
        if val.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean {key}={val!r}")
    return typ(val)


@dataclass
class ActivePlan:
    """Recovery plan state: waypoints in the frame where planning happened,
    a dead-reckoned pose within that frame, and the remembered target spot
    so the camera can face it while the body follows the path."""

    waypoints: np.ndarray         # (T_p, 2) meters, plan frame
    pose: object                  # dead-reckoned Pose in the plan frame
    target_est: np.ndarray = None # remembered target position, plan frame
    cursor: int = 0
    scan_left: int = 0            # look-around ticks once the path is walked
    faced_target: bool = False    # scan swept past the remembered spot
    orienting: bool = False       # turning toward the memory before sampling

    @property
    def exhausted(self):
        return self.cursor >= len(self.waypoints) and self.scan_left <= 0


@dataclass
class AgentState:
    mode: str
    prototype: Prototype
    kf: object = None
    lost_count: int = 0
    active_plan: ActivePlan = None
    last_box: np.ndarray = None
    replans_left: int = 0
    pid_prev: tuple = None        # (u error, height error) from the last PID tick
    feature_count: int = 1        # running count for the average-update variant
    target_memory: np.ndarray = None   # last accepted fix, body frame, odometry-aged
    last_action: Action = None


def initialize(ref_views, config):
    """Prototype from the reference plus augmented views; detection mode.

    A single view acts as both reference and augmentation set.
    """
    if len(ref_views) == 0:
        raise ValueError("ref_views must be nonempty")
    ref = ref_views[0]
    augmented = ref_views[1:] if len(ref_views) > 1 else [ref]
    prototype = init_prototype(ref, augmented)
    return AgentState(mode=DETECT, prototype=prototype, kf=None, lost_count=0,
                      active_plan=None, last_box=None, replans_left=0)


def pid_control(box, image_w, image_h, config, prev=None):
    """Center-and-range PID on an image box; returns (action, new_prev)."""
    u_err = (box[0] - image_w / 2.0) / (image_w / 2.0)
    h_err = (config.height_setpoint_frac * image_h - box[3]) / image_h
    du = u_err - prev[0] if prev is not None else 0.0
    dh = h_err - prev[1] if prev is not None else 0.0
    action = Action(
        v_f=config.kp_fwd * h_err + config.kd_fwd * dh,
        v_l=0.0,
        v_v=0.0,
        omega_y=config.kp_yaw * u_err + config.kd_yaw * du,
    )
    return action, (u_err, h_err)


@dataclass
class AgentRuntime:
    """Episode-fixed context: camera geometry, limits, planner, RNG."""

    image_w: int = 160
    image_h: int = 120
    limits: ActionLimits = field(default_factory=ActionLimits)
    predictor: object = None
    schedule: object = None
    plan_horizon: int = 16
    plan_radius: float = 3.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    @property
    def has_planner(self):
        return self.predictor is not None and self.schedule is not None


def _normalized_box(box, runtime):
    """Normalize a (possibly extrapolated) box to the trained input range.

    Long prediction-only stretches can push the extrapolation far outside
    the image; the planner was only ever conditioned on in-image boxes,
    so clamp while keeping the exit direction at the frame edge.
    """
    w = float(runtime.image_w)
    h = float(runtime.image_h)
    return np.array([
        min(max(box[0], 0.0), w) / w,
        min(max(box[1], 0.0), h) / h,
        min(max(box[2], 2.0), w) / w,
        min(max(box[3], 2.0), h) / h,
    ])


def _enhance(state, feature, config):
    """Prototype update under the configured variant, gated by the caller."""
    feat = unit(np.asarray(feature, dtype=float))
    if config.avg_update:
        m = state.feature_count
        vec = (state.prototype.vector * m + feat) / (m + 1)
        state.prototype = Prototype(vector=vec,
                                    source_instance=state.prototype.source_instance,
                                    update_count=state.prototype.update_count + 1)
        state.feature_count = m + 1
    elif config.use_ema:
        state.prototype = ema_update(state.prototype, feat, config.beta)


TARGET_HEIGHT_GUESS = 1.7      # m; turns a box height into a rough range


def _fix_from_box(box, runtime):
    """Body-frame target fix (forward, left) from an image box via the pinhole."""
    focal = runtime.image_w / 2.0
    h = max(float(box[3]), 2.0)
    rng_est = min(max(focal * TARGET_HEIGHT_GUESS / h, 0.5), 10.0)
    bearing_right = math.atan((float(box[0]) - runtime.image_w / 2.0) / focal)
    return np.array([rng_est * math.cos(bearing_right),
                     -rng_est * math.sin(bearing_right)])


def _age_memory(memory, action):
    """Propagate a body-frame point through one executed action."""
    if memory is None or action is None:
        return memory
    # world-frame target is fixed; express it in the post-action body frame
    pose0 = Pose(0.0, 0.0, 0.0)
    pose1 = integrate_pose(pose0, action)
    wx, wy = memory[0], memory[1]          # frame 0 == world here
    dx, dy = wx - pose1.x, wy - pose1.y
    cos_y, sin_y = math.cos(pose1.yaw), math.sin(pose1.yaw)
    return np.array([cos_y * dx + sin_y * dy, -sin_y * dx + cos_y * dy])


def _memory_bearing(memory):
    return math.atan2(memory[1], memory[0])


def _blocked_ahead(obs, dist=0.7, crop_radius=4.0):
    """True when the agent's own occupancy crop shows a wall just ahead.

    Keeps pursuit and plan execution from pressing into obstacles, which
    would silently divorce dead-reckoning from the collision-clamped
    true pose.
    """
    crop = obs.occupancy_crop
    if crop is None:
        return False
    size = crop.shape[0]
    step = 2.0 * crop_radius / size
    row = int((dist + crop_radius) / step)
    if not (0 <= row < size):
        return False
    rows = (row, min(row + 1, size - 1))
    cols = (size // 2 - 1, size // 2)   # the centerline splits two columns
    return bool(any(crop[r, c] for r in rows for c in cols))


def _synth_box(memory, runtime):
    """Project the remembered fix back into an image box for conditioning."""
    focal = runtime.image_w / 2.0
    fwd = max(float(memory[0]), 0.3)
    u = runtime.image_w / 2.0 + focal * (-float(memory[1]) / fwd)
    h = focal * TARGET_HEIGHT_GUESS / max(math.hypot(*memory), 0.5)
    w = h * 0.35
    return np.array([u, runtime.image_h / 2.0, w, h])


def _start_plan(state, obs, config, runtime):
    """Begin a recovery: orient toward the remembered fix, then sample.

    When the remembered target sits inside the camera cone the diffusion
    plan is sampled immediately; otherwise the plan starts with an orient
    phase (handled by ``_plan_tick``) and sampling happens once aligned,
    so the conditioning box is always in the planner's trained range.
    """
    if obs.occupancy_crop is None or not runtime.has_planner:
        return False
    if state.target_memory is None:
        if state.last_box is None:
            return False
        state.target_memory = _fix_from_box(state.last_box, runtime)
    if abs(_memory_bearing(state.target_memory)) > 0.6:
        state.active_plan = ActivePlan(
            waypoints=np.zeros((0, 2)), pose=Pose(0.0, 0.0, 0.0),
            target_est=state.target_memory.copy(),
            scan_left=config.plan_scan_len, orienting=True)
        return True
    return _sample_into_plan(state, obs, config, runtime)


def _sample_into_plan(state, obs, config, runtime):
    if obs.occupancy_crop is None or not runtime.has_planner:
        return False
    bbox = _normalized_box(_synth_box(state.target_memory, runtime), runtime)
    if not config.planner_use_bbox:
        bbox = np.zeros(4)
    condition = Condition(obs_encoding=obs.occupancy_crop.ravel(), bbox=bbox)
    traj = sample_plan(runtime.predictor, condition, runtime.schedule,
                       seed=runtime.rng, plan_horizon=runtime.plan_horizon)
    waypoints = np.asarray(traj, dtype=float) * runtime.plan_radius
    state.active_plan = ActivePlan(
        waypoints=waypoints[:config.plan_exec_len],
        pose=Pose(0.0, 0.0, 0.0),
        target_est=state.target_memory.copy(),
        scan_left=config.plan_scan_len)
    return True


def _plan_tick(plan, config, runtime, obs=None):
    """Closed-loop plan execution: body follows waypoints, camera holds the
    remembered target; the pose is dead-reckoned with the same kinematics
    the simulator integrates. Forward motion is vetoed when the crop shows
    a wall directly ahead, keeping the reckoning honest."""
    scanning = plan.cursor >= len(plan.waypoints)
    if scanning:
        v_f = v_l = 0.0
        plan.scan_left -= 1
    else:
        wp = plan.waypoints[min(plan.cursor + config.lookahead,
                                len(plan.waypoints) - 1)]
        dx = wp[0] - plan.pose.x
        dy = wp[1] - plan.pose.y
        cos_y, sin_y = math.cos(plan.pose.yaw), math.sin(plan.pose.yaw)
        v_f = cos_y * dx + sin_y * dy
        v_l = -(-sin_y * dx + cos_y * dy)
        plan.cursor += 1
    bearing_ccw = None
    if plan.target_est is not None:
        tx = plan.target_est[0] - plan.pose.x
        ty = plan.target_est[1] - plan.pose.y
        cos_y, sin_y = math.cos(plan.pose.yaw), math.sin(plan.pose.yaw)
        bearing_ccw = math.atan2(-sin_y * tx + cos_y * ty,
                                 cos_y * tx + sin_y * ty)
    if scanning:
        # face the remembered spot once, then keep sweeping
        if bearing_ccw is not None and not plan.faced_target and abs(bearing_ccw) > 0.15:
            omega = -bearing_ccw
        else:
            plan.faced_target = True
            omega = config.search_rate
    else:
        omega = -bearing_ccw if bearing_ccw is not None else config.search_rate
    if obs is not None and v_f > 0.0 and _blocked_ahead(obs):
        v_f = 0.0
    action = clamp_action(Action(v_f=v_f, v_l=v_l, omega_y=omega), runtime.limits)
    plan.pose = integrate_pose(plan.pose, action)
    return action


def policy_step(obs, state, config, runtime):
    """One control tick; returns (action, state).

    The state is advanced in place and returned for symmetry with the
    functional contract. The body-frame target memory is aged by the
    previously executed action before the branch logic runs, and the
    chosen action is recorded for the next tick.
    """
    state.target_memory = _age_memory(state.target_memory, state.last_action)
    action, state = _policy_branch(obs, state, config, runtime)
    state.last_action = action
    return action, state


def _policy_branch(obs, state, config, runtime):
    features = [c.feature for c in obs.candidates]

    if state.mode == DETECT:
        idx = match_candidates(state.prototype, features, config.eta_s)
        if idx is None:
            state.pid_prev = None
            return Action(omega_y=config.search_rate), state
        box = np.asarray(obs.candidates[idx].bbox, dtype=float)
        state.kf = estimator.init_state(box) if config.use_kf else None
        state.mode = TRACK
        state.lost_count = 0
        state.last_box = box
        state.target_memory = _fix_from_box(box, runtime)
        action, state.pid_prev = pid_control(box, runtime.image_w,
                                             runtime.image_h, config)
        return clamp_action(action, runtime.limits), state

    if state.mode == TRACK:
        measurement = None
        best_feature = None
        if features:
            sims = [cosine_similarity(state.prototype.vector, f) for f in features]
            best = int(np.argmax(sims))
            # similarity floor keeps distractor boxes out of the filter
            if sims[best] >= config.eta_s:
                cand = obs.candidates[best]
                measurement = estimator.Measurement(
                    z=np.asarray(cand.bbox, dtype=float),
                    confidence=float(cand.confidence))
                best_feature = cand.feature
        if config.use_kf:
            result = estimator.step(state.kf, measurement, config.kf_config())
            state.kf = result.state
            used = result.measurement_used
            box = result.predicted_box
            if not used:
                # coasting: cap the pursued box at the frame edge so a noisy
                # velocity estimate cannot steer the camera off the scene
                box = np.array([
                    min(max(box[0], 0.0), float(runtime.image_w)),
                    min(max(box[1], 0.0), float(runtime.image_h)),
                    min(max(box[2], 2.0), float(runtime.image_w)),
                    min(max(box[3], 2.0), float(runtime.image_h)),
                ])
        else:
            used = measurement is not None and measurement.confidence >= config.eta_c
            box = measurement.z if used else state.last_box
        if used:
            state.lost_count = 0
            state.last_box = np.asarray(box, dtype=float)
            state.target_memory = _fix_from_box(measurement.z, runtime)
            _enhance(state, best_feature, config)
        else:
            state.lost_count += 1
        if state.lost_count > config.trigger_len and config.use_planner:
            if _start_plan(state, obs, config, runtime):
                state.mode = PLAN
                state.replans_left = config.replan_budget
                state.pid_prev = None
                if state.active_plan.orienting:
                    bearing = _memory_bearing(state.target_memory)
                    return clamp_action(Action(omega_y=-bearing),
                                        runtime.limits), state
                return _plan_tick(state.active_plan, config, runtime, obs), state
        if box is None:
            state.pid_prev = None
            return Action(omega_y=config.search_rate), state
        action, state.pid_prev = pid_control(box, runtime.image_w,
                                             runtime.image_h, config)
        if not used and action.v_f > 0.0 and _blocked_ahead(obs):
            action = Action(v_f=0.0, v_l=action.v_l, v_v=0.0,
                            omega_y=action.omega_y)
        return clamp_action(action, runtime.limits), state

    if state.mode == PLAN:
        idx = match_candidates(state.prototype, features, config.eta_s)
        if idx is not None:
            box = np.asarray(obs.candidates[idx].bbox, dtype=float)
            state.kf = estimator.init_state(box) if config.use_kf else None
            state.mode = TRACK
            state.lost_count = 0
            state.last_box = box
            state.target_memory = _fix_from_box(box, runtime)
            state.active_plan = None
            action, state.pid_prev = pid_control(box, runtime.image_w,
                                                 runtime.image_h, config)
            return clamp_action(action, runtime.limits), state
        if state.kf is not None:
            state.kf = estimator.predict(state.kf, config.kf_config())
        plan = state.active_plan
        if plan is not None and plan.orienting:
            bearing = _memory_bearing(state.target_memory)
            if abs(bearing) > 0.3:
                return clamp_action(Action(omega_y=-bearing), runtime.limits), state
            if _sample_into_plan(state, obs, config, runtime):
                plan = state.active_plan
            else:
                plan.orienting = False
        if plan is None or plan.exhausted:
            if state.replans_left > 0 and _start_plan(state, obs, config, runtime):
                state.replans_left -= 1
                plan = state.active_plan
                if plan.orienting:
                    bearing = _memory_bearing(state.target_memory)
                    return clamp_action(Action(omega_y=-bearing),
                                        runtime.limits), state
            else:
                state.mode = DETECT
                state.active_plan = None
                state.kf = None
                state.pid_prev = None
                return Action(omega_y=config.search_rate), state
        return _plan_tick(plan, config, runtime, obs), state

    raise ActiveTrackError(f"unknown agent mode {state.mode!r}")


class TrackingAgent:
    """Episode-facing wrapper holding config, runtime, and mutable state."""

    def __init__(self, config=None, runtime=None):
        self.config = config or AgentConfig()
        self.runtime = runtime or AgentRuntime()
        self.state = None

    def reset(self, ref_views, rng):
        self.state = initialize(ref_views, self.config)
        self.runtime = replace(self.runtime, rng=rng)

    def act(self, obs):
        action, self.state = policy_step(obs, self.state, self.config, self.runtime)
        return action

    @property
    def mode(self):
        return self.state.mode if self.state is not None else None
