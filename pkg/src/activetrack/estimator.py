"""Confidence-aware Kalman filter over an 8-dim bounding-box state.

State is [x, y, w, h, vx, vy, vw, vh] in pixels / pixels-per-step under a
constant-velocity transition. The measurement-noise covariance is
sigma^2(c) * I with a sigmoid confidence mapping, so low-confidence boxes
shrink the gain and the filter coasts on its own motion model.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularInnovation

MIN_BOX_SIDE = 0.1  # px; keeps downstream geometry away from degenerate boxes


def _default_f():
    f = np.eye(8)
    f[:4, 4:] = np.eye(4)
    return f


def _default_h():
    h = np.zeros((4, 8))
    h[:, :4] = np.eye(4)
    return h


@dataclass(frozen=True)
class KfConfig:
    F: np.ndarray = field(default_factory=_default_f)
    H: np.ndarray = field(default_factory=_default_h)
    Q: np.ndarray = field(default_factory=lambda: 1e-5 * np.eye(8))
    lam: float = 15.0
    gamma: float = 0.4
    eta_c: float = 0.5
    confidence_aware: bool = True
    fixed_sigma2: float = 0.5     # used when confidence_aware is False


@dataclass(frozen=True)
class KfState:
    x: np.ndarray                 # (8,)
    P: np.ndarray                 # (8, 8)


@dataclass(frozen=True)
class Measurement:
    z: np.ndarray                 # (4,) box [x, y, w, h]
    confidence: float


@dataclass(frozen=True)
class StepResult:
    state: KfState
    predicted_box: np.ndarray     # (4,)
    measurement_used: bool


def init_state(box):
    """State from a first detection: box as-is, zero velocities, loose velocity prior."""
    x = np.zeros(8)
    x[:4] = np.asarray(box, dtype=float)
    P = np.diag([10.0, 10.0, 10.0, 10.0, 100.0, 100.0, 100.0, 100.0])
    return KfState(x=x, P=P)


def _symmetrize(P):
    return (P + P.T) / 2.0


def confidence_noise(c, lam, gamma):
    """sigma^2(c) = 1 / (1 + exp(lam * (c - gamma))); strictly decreasing in c."""
    c = min(max(float(c), 0.0), 1.0)
    return 1.0 / (1.0 + math.exp(lam * (c - gamma)))


def measurement_covariance(confidence, config):
    if config.confidence_aware:
        s2 = confidence_noise(confidence, config.lam, config.gamma)
    else:
        s2 = config.fixed_sigma2
    return s2 * np.eye(4)


def predict(state, config):
    x = config.F @ state.x
    P = _symmetrize(config.F @ state.P @ config.F.T + config.Q)
    return KfState(x=x, P=P)


def kalman_gain(P, confidence, config):
    """Gain and innovation covariance for the given prior covariance."""
    R = measurement_covariance(confidence, config)
    S = config.H @ P @ config.H.T + R
    if np.linalg.cond(S) > 1e12:
        raise SingularInnovation("innovation covariance is numerically singular")
    K = P @ config.H.T @ np.linalg.inv(S)
    return K, S


def update(state, m, config):
    """Measurement update in Joseph form; the caller must have predicted first.

    The eta_c gate lives in ``step``; calling this directly applies the
    measurement regardless of confidence (the gain simply shrinks at low c).
    """
    K, _ = kalman_gain(state.P, m.confidence, config)
    innovation = np.asarray(m.z, dtype=float) - config.H @ state.x
    x = state.x + K @ innovation
    ikh = np.eye(8) - K @ config.H
    R = measurement_covariance(m.confidence, config)
    P = _symmetrize(ikh @ state.P @ ikh.T + K @ R @ K.T)
    x[2] = max(x[2], MIN_BOX_SIDE)
    x[3] = max(x[3], MIN_BOX_SIDE)
    return KfState(x=x, P=P)


def step(state, obs, config):
    """One predict(+update) cycle.

    Always predicts; updates only when a measurement is present and its
    confidence clears eta_c, mirroring the gated tracker loop. The
    returned box comes from the posterior when updated, else the prior,
    so the filter keeps extrapolating motion through dropouts.
    """
    prior = predict(state, config)
    if obs is not None and obs.confidence >= config.eta_c:
        post = update(prior, obs, config)
        return StepResult(state=post, predicted_box=config.H @ post.x,
                          measurement_used=True)
    return StepResult(state=prior, predicted_box=config.H @ prior.x,
                      measurement_used=False)


@dataclass
class FilterTrace:
    """CSV-exportable record of a filter run."""

    rows: list = field(default_factory=list)

    def record(self, step_idx, prior_box, posterior_box, confidence, used, trace_p):
        self.rows.append((step_idx, prior_box, posterior_box, confidence, used, trace_p))

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["step", "prior_x", "prior_y", "prior_w", "prior_h",
             "post_x", "post_y", "post_w", "post_h",
             "confidence", "measurement_used", "trace_P"])
        for step_idx, prior, post, conf, used, tp in self.rows:
            writer.writerow([step_idx, *[repr(float(v)) for v in prior],
                             *[repr(float(v)) for v in post],
                             repr(float(conf)), int(used), repr(float(tp))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text
