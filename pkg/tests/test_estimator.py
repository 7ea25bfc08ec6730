import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activetrack import estimator
from activetrack.estimator import (FilterTrace, KfConfig, KfState, Measurement,
                                   confidence_noise, init_state, kalman_gain,
                                   predict, step, update)


def make_state(x=None, p=None):
    return KfState(x=np.zeros(8) if x is None else np.asarray(x, dtype=float),
                   P=np.eye(8) if p is None else p)


def test_predict_zero_velocity_fixed_point():
    cfg = KfConfig()
    state = make_state([10, 10, 5, 5, 0, 0, 0, 0])
    out = predict(state, cfg)
    assert np.allclose(out.x, state.x)


def test_predict_constant_velocity_advance():
    cfg = KfConfig()
    out = predict(make_state([10, 10, 5, 5, 2, -1, 0, 0]), cfg)
    assert np.allclose(out.x[:4], [12, 9, 5, 5])


def test_predict_noiseless_degenerate_covariance():
    cfg = KfConfig(Q=np.zeros((8, 8)))
    out = predict(KfState(x=np.zeros(8), P=np.zeros((8, 8))), cfg)
    assert np.array_equal(out.P, np.zeros((8, 8)))


def test_predict_trace_nondecreasing():
    cfg = KfConfig()
    state = init_state([5, 5, 2, 2])
    for _ in range(20):
        nxt = predict(state, cfg)
        assert np.trace(nxt.P) >= np.trace(state.P) - 1e-12
        state = nxt


def test_confidence_noise_values():
    assert confidence_noise(0.4, 15.0, 0.4) == 0.5
    assert confidence_noise(1.0, 15.0, 0.4) == pytest.approx(1.0 / (1.0 + math.exp(9.0)), rel=1e-12)
    assert confidence_noise(0.0, 15.0, 0.4) == pytest.approx(1.0 / (1.0 + math.exp(-6.0)), rel=1e-12)


def test_confidence_noise_strictly_decreasing():
    cs = np.linspace(0.0, 1.0, 1000)
    vals = [confidence_noise(c, 15.0, 0.4) for c in cs]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert all(0.0 < v < 1.0 for v in vals)


def test_update_zero_innovation_keeps_mean():
    cfg = KfConfig()
    state = make_state([10, 20, 6, 8, 1, 1, 0, 0])
    z = cfg.H @ state.x
    out = update(state, Measurement(z=z, confidence=0.9), cfg)
    assert np.allclose(out.x, state.x, atol=1e-12)


def test_update_identity_covariance_gain():
    cfg = KfConfig(confidence_aware=False, fixed_sigma2=1.0)
    K, _ = kalman_gain(np.eye(8), 0.9, cfg)
    assert np.allclose(K, cfg.H.T * 0.5, atol=1e-12)


def test_gain_grows_with_confidence():
    cfg = KfConfig()
    P = np.eye(8)
    k_low, _ = kalman_gain(P, 0.4, cfg)
    k_high, _ = kalman_gain(P, 1.0, cfg)
    assert np.linalg.norm(k_high) > np.linalg.norm(k_low)


def test_gain_monotone_over_confidence_sweep():
    cfg = KfConfig()
    P = np.diag([4.0, 4.0, 2.0, 2.0, 9.0, 9.0, 1.0, 1.0])
    norms = [np.linalg.norm(kalman_gain(P, c, cfg)[0])
             for c in np.linspace(0.0, 1.0, 1000)]
    assert all(b >= a - 1e-12 for a, b in zip(norms, norms[1:]))


def test_update_clamps_box_size():
    cfg = KfConfig()
    state = make_state([10, 10, 0.5, 0.5, 0, 0, 0, 0])
    out = update(state, Measurement(z=np.array([10, 10, -5.0, -5.0]),
                                    confidence=1.0), cfg)
    assert out.x[2] >= 0.1 and out.x[3] >= 0.1


def test_step_prediction_only_extrapolates():
    cfg = KfConfig()
    state = init_state([0, 0, 5, 5])
    state = KfState(x=np.array([0, 0, 5, 5, 1, 0, 0, 0], dtype=float), P=state.P)
    positions = []
    for _ in range(5):
        res = step(state, None, cfg)
        state = res.state
        positions.append(res.predicted_box[0])
        assert not res.measurement_used
    assert np.allclose(positions, [1, 2, 3, 4, 5])


def test_step_gates_low_confidence():
    cfg = KfConfig(eta_c=0.5)
    state = make_state([10, 10, 5, 5, 0, 0, 0, 0])
    res = step(state, Measurement(z=np.array([50.0, 50, 9, 9]), confidence=0.3), cfg)
    assert not res.measurement_used
    assert np.allclose(res.state.x, predict(state, cfg).x)


def test_step_accepts_high_confidence():
    cfg = KfConfig(eta_c=0.5)
    state = make_state([10, 10, 5, 5, 0, 0, 0, 0])
    res = step(state, Measurement(z=np.array([11.0, 10, 5, 5]), confidence=0.9), cfg)
    assert res.measurement_used
    assert res.predicted_box[0] > 10.0


def test_posterior_beats_raw_measurements():
    """Seeded constant-velocity oracle: filtering must denoise the boxes."""
    cfg = KfConfig()
    ratios = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        truth0 = np.array([20.0, 30.0, 10.0, 12.0])
        vel = np.array([1.5, -0.7, 0.02, 0.01])
        steps = 200
        truth = truth0[None, :] + np.arange(steps)[:, None] * vel[None, :]
        zs = truth + rng.normal(0.0, 2.0, size=(steps, 4))
        state = init_state(zs[0])
        post = []
        for t in range(1, steps):
            res = step(state, Measurement(z=zs[t], confidence=0.9), cfg)
            state = res.state
            post.append(res.predicted_box.copy())
        post = np.array(post)
        rmse_post = np.sqrt(np.mean((post - truth[1:]) ** 2))
        rmse_meas = np.sqrt(np.mean((zs[1:] - truth[1:]) ** 2))
        ratios.append(rmse_post / rmse_meas)
    assert np.mean(ratios) < 1.0


def test_near_perfect_measurements_converge_fast():
    """R -> 0 (c = 1, steep sigmoid) pins the posterior to the measurements."""
    cfg = KfConfig(lam=200.0)
    state = init_state([0, 0, 5, 5])
    z = np.array([40.0, 7.0, 6.0, 5.0])
    for _ in range(3):
        res = step(state, Measurement(z=z, confidence=1.0), cfg)
        state = res.state
    assert np.allclose(state.x[:4], z, atol=1e-3)


@given(st.lists(st.tuples(st.booleans(), st.floats(0.0, 1.0)), min_size=1,
                max_size=40))
@settings(max_examples=25, deadline=None)
def test_covariance_stays_symmetric_psd(seq):
    cfg = KfConfig()
    state = init_state([10, 10, 5, 5])
    rng = np.random.default_rng(7)
    for has_obs, conf in seq:
        obs = None
        if has_obs:
            obs = Measurement(z=rng.normal(10, 3, 4), confidence=conf)
        state = step(state, obs, cfg).state
        assert np.max(np.abs(state.P - state.P.T)) <= 1e-9
        assert np.min(np.linalg.eigvalsh(state.P)) >= -1e-8


def test_filter_trace_csv_roundtrip(tmp_path):
    cfg = KfConfig()
    state = init_state([10, 10, 5, 5])
    trace = FilterTrace()
    rng = np.random.default_rng(1)
    for t in range(5):
        prior = predict(state, cfg)
        obs = Measurement(z=rng.normal(10, 1, 4), confidence=0.8)
        res = step(state, obs, cfg)
        trace.record(t, cfg.H @ prior.x, res.predicted_box, obs.confidence,
                     res.measurement_used, float(np.trace(res.state.P)))
        state = res.state
    out = tmp_path / "trace.csv"
    text = trace.to_csv(out)
    lines = text.strip().splitlines()
    assert lines[0].startswith("step,prior_x")
    assert len(lines) == 6
    assert out.read_text() == text
