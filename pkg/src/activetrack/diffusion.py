"""Conditional denoising diffusion over planar trajectories.

The planner denoises a T_p x 2 waypoint matrix (tracker frame, values in
[-1, 1]) conditioned on an occupancy crop plus the target box. A cosine
variance schedule drives both the forward noising used for training and
the reverse update

    A_{k-1} = rev_alpha[k] * (A_k - rev_phi[k] * eps_hat) + sigma[k] * N(0, I)

whose final step (k = 1) is deterministic because sigma[1] = 0.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteLoss, NonFiniteOutput
from .network import NoisePredictor, batch_loss_and_grads
from .world import Action, Pose, integrate_pose

CHECKPOINT_MAGIC = b"OAVPLAN1"


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step coefficients, 1-based in k; index 0 is the clean anchor."""

    K: int
    alpha_bar: np.ndarray         # (K+1,), alpha_bar[0] = 1
    signal: np.ndarray            # sqrt(alpha_bar)
    noise: np.ndarray             # sqrt(1 - alpha_bar)
    rev_alpha: np.ndarray         # (K+1,), [0] unused
    rev_phi: np.ndarray
    sigma: np.ndarray


def build_schedule(K, s=0.008, terminal_signal=0.05):
    """Cosine variance schedule with the standard DDPM identities.

    The raw cosine profile concentrates nearly all of its decay in the
    final step once K is small, which makes the reverse update amplify
    model error by 1/sqrt(alpha_K) >> 1 in a single jump. The per-step
    beta is therefore capped at the smallest uniform value (found by
    bisection) that still drives the terminal signal coefficient down to
    ``terminal_signal``: the body keeps the cosine shape while the tail
    spreads its decay over bounded steps.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    ks = np.arange(K + 1, dtype=float)
    f = np.cos(((ks / K) + s) / (1.0 + s) * math.pi / 2.0) ** 2
    raw = np.clip(1.0 - f[1:] / f[:-1], 1e-8, 1.0 - 1e-8)
    target = terminal_signal ** 2
    lo, hi = 1e-6, 1.0 - 1e-9
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.prod(1.0 - np.minimum(raw, mid)) > target:
            lo = mid
        else:
            hi = mid
    betas = np.minimum(raw, hi)
    alphas = 1.0 - betas
    alpha_bar = np.concatenate([[1.0], np.cumprod(alphas)])
    rev_alpha = np.concatenate([[0.0], 1.0 / np.sqrt(alphas)])
    rev_phi = np.concatenate([[0.0], betas / np.sqrt(1.0 - alpha_bar[1:])])
    post_var = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * betas
    sigma = np.concatenate([[0.0], np.sqrt(post_var)])
    return NoiseSchedule(K=K, alpha_bar=alpha_bar,
                         signal=np.sqrt(alpha_bar),
                         noise=np.sqrt(1.0 - alpha_bar),
                         rev_alpha=rev_alpha, rev_phi=rev_phi, sigma=sigma)


def forward_noise(a0, k, eps, schedule):
    """Noised trajectory signal[k] * a0 + noise[k] * eps (shapes preserved)."""
    if not 1 <= k <= schedule.K:
        raise ValueError("k must lie in 1..K")
    a0 = np.asarray(a0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if eps.shape != a0.shape:
        raise ValueError("eps shape must match the trajectory")
    return schedule.signal[k] * a0 + schedule.noise[k] * eps


@dataclass(frozen=True)
class Condition:
    obs_encoding: np.ndarray      # flattened occupancy crop
    bbox: np.ndarray              # (4,) normalized [cx, cy, w, h]


CROP_FEATURE_SCALE = 0.0625   # 1/sqrt(256): crop block variance ~ one trajectory dim


def condition_vector(condition):
    """Crop, box, and the box-derived bearing cue as one flat vector.

    The binary crop is recentered to +-1 and scaled down so its 256
    entries do not drown the 32 trajectory inputs at the first layer.
    """
    obs = np.asarray(condition.obs_encoding, dtype=float).ravel()
    bbox = np.asarray(condition.bbox, dtype=float)
    bearing = np.array([2.0 * (bbox[0] - 0.5)])
    return np.concatenate([(2.0 * obs - 1.0) * CROP_FEATURE_SCALE, bbox, bearing])


def loss(predictor, samples, schedule, rng):
    """Monte-Carlo estimate of the noise-reconstruction objective."""
    if len(samples) == 0:
        raise ValueError("batch must be nonempty")
    a0 = np.stack([s.traj.ravel() for s in samples])
    cond = np.stack([condition_vector(Condition(s.obs, s.bbox)) for s in samples])
    k = rng.integers(1, schedule.K + 1, size=len(samples))
    eps = rng.standard_normal(a0.shape)
    noisy = schedule.signal[k][:, None] * a0 + schedule.noise[k][:, None] * eps
    out = predictor.predict_batch(noisy, cond, k)
    return float(np.mean(np.sum((out - eps) ** 2, axis=1)))


@dataclass
class TrainConfig:
    epochs: int = 60
    batch: int = 64
    lr: float = 2e-2              # peak rate; warmup then cosine decay
    momentum: float = 0.9
    warmup_batches: int = None    # default: a tenth of the run, at most 40
    mirror: bool = True           # left/right-reflected copies of every sample
    polyak: float = 0.995         # weight-average decay; 0 disables
    seed: int = 0


@dataclass
class TrainResult:
    predictor: NoisePredictor
    loss_curve: list              # entry 0 = pre-training evaluation


def _eval_arrays(a0, cond, k, eps, predictor, schedule):
    noisy = schedule.signal[k][:, None] * a0 + schedule.noise[k][:, None] * eps
    out = predictor.predict_batch(noisy, cond, k)
    return float(np.mean(np.sum((out - eps) ** 2, axis=1)))


def _mirror_arrays(samples):
    """Left/right-reflected copy of each sample; the kinematics are
    mirror-symmetric so this doubles coverage for free."""
    a0, cond = [], []
    for s in samples:
        size = int(math.isqrt(s.obs.size))
        crop = np.asarray(s.obs, dtype=float).reshape(size, size)[:, ::-1]
        bbox = np.asarray(s.bbox, dtype=float).copy()
        bbox[0] = 1.0 - bbox[0]
        traj = np.asarray(s.traj, dtype=float).copy()
        traj[:, 1] = -traj[:, 1]
        a0.append(traj.ravel())
        cond.append(condition_vector(Condition(crop.ravel(), bbox)))
    return np.stack(a0), np.stack(cond)


def train(predictor, dataset, schedule, config=None):
    """SGD with momentum on the noise-reconstruction objective.

    The reported curve evaluates the full dataset under one frozen draw
    of (k, eps) per sample, before training and after every epoch, so a
    zero learning rate yields an exactly flat curve. The final weights
    are a Polyak average when ``config.polyak`` is nonzero.
    """
    config = config or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    a0 = np.stack([s.traj.ravel() for s in dataset])
    cond = np.stack([condition_vector(Condition(s.obs, s.bbox)) for s in dataset])
    if config.mirror:
        m_a0, m_cond = _mirror_arrays(dataset)
        a0 = np.concatenate([a0, m_a0])
        cond = np.concatenate([cond, m_cond])
    n = a0.shape[0]
    root = np.random.SeedSequence(config.seed)
    train_rng, eval_rng = [np.random.default_rng(s) for s in root.spawn(2)]
    k_eval = eval_rng.integers(1, schedule.K + 1, size=n)
    eps_eval = eval_rng.standard_normal(a0.shape)

    velocity = [np.zeros_like(p) for p in predictor.parameters()]
    average = predictor.get_flat() if config.polyak else None
    curve = [_eval_arrays(a0, cond, k_eval, eps_eval, predictor, schedule)]
    total_batches = config.epochs * max(1, math.ceil(n / config.batch))
    warmup = config.warmup_batches
    if warmup is None:
        warmup = max(1, min(40, total_batches // 10))
    batch_id = 0
    for _ in range(config.epochs):
        perm = train_rng.permutation(n)
        for lo in range(0, n, config.batch):
            idx = perm[lo:lo + config.batch]
            k = train_rng.integers(1, schedule.K + 1, size=idx.size)
            eps = train_rng.standard_normal((idx.size, a0.shape[1]))
            noisy = schedule.signal[k][:, None] * a0[idx] \
                + schedule.noise[k][:, None] * eps
            batch_loss, grads = batch_loss_and_grads(
                predictor, noisy, cond[idx], k, eps)
            if not math.isfinite(batch_loss):
                raise NonFiniteLoss(
                    f"loss became non-finite at batch {batch_id}", batch_id)
            warm = min(1.0, (batch_id + 1) / warmup)
            decay = 0.5 * (1.0 + math.cos(math.pi * batch_id / total_batches))
            lr = config.lr * warm * decay
            for vel, name in zip(velocity, predictor.param_names):
                g = getattr(grads, name)
                vel *= config.momentum
                vel -= lr * g
                setattr(predictor, name, getattr(predictor, name) + vel)
            if average is not None:
                average = config.polyak * average \
                    + (1.0 - config.polyak) * predictor.get_flat()
            batch_id += 1
        curve.append(_eval_arrays(a0, cond, k_eval, eps_eval, predictor, schedule))
    if average is not None:
        predictor.set_flat(average)
        curve[-1] = _eval_arrays(a0, cond, k_eval, eps_eval, predictor, schedule)
    return TrainResult(predictor=predictor, loss_curve=curve)


def sample_plan(predictor, condition, schedule, seed=0, plan_horizon=16):
    """Iteratively denoise Gaussian noise into a trajectory; deterministic per seed."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cond = condition_vector(condition)
    dim = 2 * plan_horizon
    x = rng.standard_normal(dim)
    for k in range(schedule.K, 0, -1):
        eps_hat = predictor.predict(x, cond, k)
        x = schedule.rev_alpha[k] * (x - schedule.rev_phi[k] * eps_hat)
        if schedule.sigma[k] > 0.0:
            x = x + schedule.sigma[k] * rng.standard_normal(dim)
    if not np.all(np.isfinite(x)):
        raise NonFiniteOutput("sampled trajectory is not finite")
    return np.clip(x, -1.0, 1.0).reshape(plan_horizon, 2)


def trajectory_to_actions(traj, lookahead=3, limits=None, plan_radius=4.0,
                          kp_speed=1.0, kp_yaw=1.0):
    """Pure pursuit over the waypoint list with a kinematic pose preview.

    At tick i the controller steers toward the lookahead-th upcoming
    waypoint in the previewed body frame; forward/lateral speeds are
    proportional to the body-frame offsets. Positive omega turns right,
    so a waypoint on the left yields a negative yaw command. A waypoint
    far off-heading triggers a turn in place before translating, which
    keeps recovery plans that start behind the tracker executable.
    """
    from .world import ActionLimits, clamp_action

    if lookahead < 1:
        raise ValueError("lookahead must be >= 1")
    limits = limits or ActionLimits()
    pts = np.asarray(traj, dtype=float) * plan_radius
    pose = Pose(x=0.0, y=0.0, yaw=0.0)
    actions = []
    for i in range(pts.shape[0]):
        wp = pts[min(i + lookahead, pts.shape[0] - 1)]
        dx = wp[0] - pose.x
        dy = wp[1] - pose.y
        cos_y, sin_y = math.cos(pose.yaw), math.sin(pose.yaw)
        fwd = cos_y * dx + sin_y * dy
        left = -sin_y * dx + cos_y * dy
        heading = math.atan2(left, fwd) if (abs(fwd) > 1e-12 or abs(left) > 1e-12) else 0.0
        if abs(heading) > math.pi / 3 and math.hypot(fwd, left) > 0.3:
            action = clamp_action(Action(omega_y=-kp_yaw * heading), limits)
        else:
            action = clamp_action(Action(
                v_f=kp_speed * fwd,
                v_l=-kp_speed * left,
                v_v=0.0,
                omega_y=-kp_yaw * heading,
            ), limits)
        actions.append(action)
        pose = integrate_pose(pose, action)
    return actions


# --- checkpoint io -----------------------------------------------------------

def save_checkpoint(path, predictor, schedule, plan_horizon=16):
    """Versioned binary: magic, layer dims, K, T_p, then float64 LE params."""
    header = struct.pack(
        "<8I", 1, predictor.cond_dim, predictor.traj_dim, predictor.k_emb_dim,
        predictor.hidden[0], predictor.hidden[1], schedule.K, plan_horizon)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(header)
        fh.write(predictor.get_flat().astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (predictor, schedule, plan_horizon)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version, cond_dim, traj_dim, k_emb, h1, h2, K, plan_horizon) = struct.unpack(
            "<8I", fh.read(32))
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        predictor = NoisePredictor(cond_dim, traj_dim, (h1, h2), k_emb, seed=0)
        raw = fh.read(predictor.n_params * 8)
        flat = np.frombuffer(raw, dtype="<f8")
        predictor.set_flat(flat)
    return predictor, build_schedule(K), plan_horizon
