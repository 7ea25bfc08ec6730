"""Fully-connected noise predictor with hand-derived gradients.

Input layout per item: [noisy trajectory (2*T_p) | condition vector |
sinusoidal embedding of the diffusion step]. Two tanh hidden layers keep
the loss smooth so central finite differences can certify the backward
pass tightly.
"""

import math
from dataclasses import dataclass

import numpy as np


def sinusoidal_embedding(k, dim=16):
    """Transformer-style embedding of integer diffusion steps, shape (n, dim)."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = k[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray


class NoisePredictor:
    """traj + condition + step embedding -> predicted noise."""

    def __init__(self, cond_dim, traj_dim=32, hidden=(256, 256), k_emb_dim=16,
                 seed=0):
        if len(hidden) != 2:
            raise ValueError("exactly two hidden layers are supported")
        self.cond_dim = int(cond_dim)
        self.traj_dim = int(traj_dim)
        self.k_emb_dim = int(k_emb_dim)
        self.hidden = (int(hidden[0]), int(hidden[1]))
        self.input_dim = self.traj_dim + self.cond_dim + self.k_emb_dim
        rng = np.random.default_rng(seed)
        h1, h2 = self.hidden
        self.w1 = rng.normal(0.0, 1.0 / math.sqrt(self.input_dim), (h1, self.input_dim))
        self.b1 = np.zeros(h1)
        self.w2 = rng.normal(0.0, 1.0 / math.sqrt(h1), (h2, h1))
        self.b2 = np.zeros(h2)
        self.w3 = rng.normal(0.0, 1.0 / math.sqrt(h2), (self.traj_dim, h2))
        self.b3 = np.zeros(self.traj_dim)

    # --- forward ---------------------------------------------------------

    def assemble_input(self, noisy, cond, k):
        noisy = np.atleast_2d(noisy)
        cond = np.atleast_2d(cond)
        emb = sinusoidal_embedding(k, self.k_emb_dim)
        if cond.shape[0] == 1 and noisy.shape[0] > 1:
            cond = np.repeat(cond, noisy.shape[0], axis=0)
        return np.concatenate([noisy, cond, emb], axis=1)

    def forward(self, x):
        """Raw forward on assembled input; returns (output, cache)."""
        z1 = x @ self.w1.T + self.b1
        h1 = np.tanh(z1)
        z2 = h1 @ self.w2.T + self.b2
        h2 = np.tanh(z2)
        out = h2 @ self.w3.T + self.b3
        return out, (x, h1, h2)

    def predict(self, noisy, cond, k):
        """Noise estimate for a single item, shape (traj_dim,)."""
        out, _ = self.forward(self.assemble_input(noisy, cond, [k]))
        return out[0]

    def predict_batch(self, noisy, cond, k):
        out, _ = self.forward(self.assemble_input(noisy, cond, k))
        return out

    # --- backward --------------------------------------------------------

    def backward(self, cache, dout):
        """Parameter gradients given d(loss)/d(output)."""
        x, h1, h2 = cache
        g_w3 = dout.T @ h2
        g_b3 = dout.sum(axis=0)
        dh2 = dout @ self.w3
        dz2 = dh2 * (1.0 - h2 * h2)
        g_w2 = dz2.T @ h1
        g_b2 = dz2.sum(axis=0)
        dh1 = dz2 @ self.w2
        dz1 = dh1 * (1.0 - h1 * h1)
        g_w1 = dz1.T @ x
        g_b1 = dz1.sum(axis=0)
        return Gradients(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2, w3=g_w3, b3=g_b3)

    # --- parameter plumbing -----------------------------------------------

    @property
    def param_names(self):
        return ("w1", "b1", "w2", "b2", "w3", "b3")

    def parameters(self):
        return [getattr(self, name) for name in self.param_names]

    @property
    def n_params(self):
        return sum(p.size for p in self.parameters())

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError("flat parameter vector has the wrong size")
        pos = 0
        for name in self.param_names:
            p = getattr(self, name)
            nxt = pos + p.size
            setattr(self, name, flat[pos:nxt].reshape(p.shape).copy())
            pos = nxt

    def clone(self):
        other = NoisePredictor(self.cond_dim, self.traj_dim, self.hidden,
                               self.k_emb_dim, seed=0)
        other.set_flat(self.get_flat())
        return other


class ZeroPredictor:
    """Test double that always predicts zero noise."""

    def __init__(self, traj_dim=32):
        self.traj_dim = traj_dim

    def predict(self, noisy, cond, k):
        return np.zeros(self.traj_dim)

    def predict_batch(self, noisy, cond, k):
        return np.zeros((np.atleast_2d(noisy).shape[0], self.traj_dim))


def batch_loss_and_grads(predictor, noisy, cond, k, eps):
    """Mean squared noise-reconstruction error and its parameter gradients."""
    x = predictor.assemble_input(noisy, cond, k)
    out, cache = predictor.forward(x)
    diff = out - np.atleast_2d(eps)
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    dout = 2.0 * diff / diff.shape[0]
    return loss, predictor.backward(cache, dout)


def grad_check(predictor, sample, schedule, h=1e-5, n_checked=200, seed=0):
    """Max relative error between analytic and central-difference gradients.

    Uses a single item with frozen (k, eps) so the loss is a deterministic
    function of the parameters.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-6, 1e-3]")
    a0, cond = sample
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, schedule.K + 1))
    eps = rng.standard_normal(predictor.traj_dim)
    noisy = schedule.signal[k] * np.asarray(a0, dtype=float) + schedule.noise[k] * eps

    def loss_at(flat):
        probe = predictor.clone()
        probe.set_flat(flat)
        l, _ = batch_loss_and_grads(probe, noisy[None, :], cond[None, :], [k],
                                    eps[None, :])
        return l

    _, grads = batch_loss_and_grads(predictor, noisy[None, :], cond[None, :],
                                    [k], eps[None, :])
    analytic = np.concatenate([
        getattr(grads, name).ravel() for name in predictor.param_names])
    flat = predictor.get_flat()
    idx = rng.choice(flat.size, size=min(n_checked, flat.size), replace=False)
    max_rel = 0.0
    for i in idx:
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        up = loss_at(bumped)
        bumped[i] = flat[i] - h
        down = loss_at(bumped)
        numeric = (up - down) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(numeric), 1e-6)
        max_rel = max(max_rel, abs(analytic[i] - numeric) / denom)
    return float(max_rel)
