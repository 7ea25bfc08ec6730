import math

import numpy as np
import pytest

from activetrack.agent import (DETECT, PLAN, TRACK, AgentConfig, AgentRuntime,
                               TrackingAgent, initialize, pid_control,
                               policy_step)
from activetrack.diffusion import build_schedule
from activetrack.episode import correct_action_rate, run_episode
from activetrack.features import describe, generate_manifold_set
from activetrack.network import ZeroPredictor
from activetrack.world import Candidate, Observation

MSET = generate_manifold_set(2, 64, 0.8, 0.2, num_view_dirs=4, seed=0)
TARGET_M, OTHER_M = MSET[0], MSET[1]


def ref_views(n=8, angle=0.0):
    views = [describe(TARGET_M, angle)]
    views += [describe(TARGET_M, angle + 2 * np.pi * i / n) for i in range(n)]
    return views


def cand(feature, bbox=(80.0, 60.0, 20.0, 54.0), conf=0.9, instance_id=0):
    return Candidate(bbox=np.array(bbox, dtype=float), instance_id=instance_id,
                     category="person", visibility=conf, feature=feature,
                     confidence=conf)


def obs_with(candidates, step=0, crop=None):
    return Observation(step=step, candidates=tuple(candidates),
                       occupancy_crop=crop)


def fresh(config=None, runtime=None):
    state = initialize(ref_views(), config or AgentConfig())
    return state, (config or AgentConfig()), (runtime or AgentRuntime())


# --- initialization -------------------------------------------------------------


def test_initialize_single_view_is_that_vector():
    v = describe(TARGET_M, 0.3)
    state = initialize([v], AgentConfig())
    assert np.allclose(state.prototype.vector, v, atol=1e-12)
    assert state.mode == DETECT
    assert state.kf is None


def test_initialize_prototype_near_manifold_mean():
    state = initialize(ref_views(), AgentConfig())
    sim = float(state.prototype.vector @ TARGET_M.mean_direction)
    assert sim >= 0.8


def test_initialize_empty_rejected():
    with pytest.raises(ValueError):
        initialize([], AgentConfig())


# --- pid --------------------------------------------------------------------------


def test_pid_zero_at_setpoint():
    cfg = AgentConfig()
    box = np.array([80.0, 60.0, 20.0, cfg.height_setpoint_frac * 120.0])
    action, _ = pid_control(box, 160, 120, cfg)
    assert action.omega_y == pytest.approx(0.0)
    assert action.v_f == pytest.approx(0.0)


def test_pid_right_edge_turns_right():
    cfg = AgentConfig()
    action, _ = pid_control(np.array([159.0, 60.0, 10.0, 54.0]), 160, 120, cfg)
    assert action.omega_y > 0.0


def test_pid_oversize_box_backs_away():
    cfg = AgentConfig()
    box = np.array([80.0, 60.0, 20.0, 2 * cfg.height_setpoint_frac * 120.0])
    action, _ = pid_control(box, 160, 120, cfg)
    assert action.v_f < 0.0


def test_pid_car_on_offset_sweep():
    """Every PID action outside the dead zone reduces the horizontal offset."""
    from activetrack.episode import EpisodeLog, StepRecord
    cfg = AgentConfig()
    recs = []
    prev = None
    for i, off in enumerate(np.linspace(-70, 70, 141)):
        box = np.array([80.0 + off, 60.0, 10.0, 54.0])
        action, prev = pid_control(box, 160, 120, cfg, None)
        recs.append(StepRecord(step=i, tracker_pose=(0, 0, 0),
                               target_pose=(0, 0, 0),
                               action=(action.v_f, action.v_l, action.v_v,
                                       action.omega_y),
                               reward=0.0, target_visible=True,
                               bbox=tuple(box)))
    assert correct_action_rate(EpisodeLog(records=recs), dead_zone_px=8) == 1.0


# --- mode machine -----------------------------------------------------------------


def test_detect_to_track_on_match():
    state, cfg, rt = fresh()
    obs = obs_with([cand(describe(TARGET_M, 0.4))])
    action, state = policy_step(obs, state, cfg, rt)
    assert state.mode == TRACK
    assert state.kf is not None


def test_detect_keeps_searching_on_distractor():
    state, cfg, rt = fresh()
    obs = obs_with([cand(describe(OTHER_M, 0.1), instance_id=1)])
    action, state = policy_step(obs, state, cfg, rt)
    assert state.mode == DETECT
    assert action.omega_y == cfg.search_rate
    assert action.v_f == 0.0


def test_track_updates_prototype_on_accept():
    state, cfg, rt = fresh()
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 0.0))]), state, cfg, rt)
    count0 = state.prototype.update_count
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 0.5))]), state, cfg, rt)
    assert state.prototype.update_count == count0 + 1
    assert state.lost_count == 0


def test_track_rejects_low_confidence_without_update():
    state, cfg, rt = fresh()
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 0.0))]), state, cfg, rt)
    count0 = state.prototype.update_count
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 0.2), conf=0.3)]),
                           state, cfg, rt)
    assert state.prototype.update_count == count0
    assert state.lost_count == 1


def test_track_ignores_confident_distractor():
    """A high-confidence distractor box must not reach the filter."""
    state, cfg, rt = fresh()
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 0.0))]), state, cfg, rt)
    x_before = state.kf.x.copy()
    distractor = cand(describe(OTHER_M, 0.2), bbox=(10.0, 10.0, 30.0, 90.0),
                      conf=1.0, instance_id=1)
    _, state = policy_step(obs_with([distractor]), state, cfg, rt)
    assert state.lost_count == 1
    # the filter only predicted; it did not absorb the distractor box
    assert abs(state.kf.x[0] - x_before[0]) < 1.0


def test_plan_triggered_exactly_once_after_l_plus_one():
    crop = np.zeros((16, 16))
    rt = AgentRuntime(predictor=ZeroPredictor(32), schedule=build_schedule(10))
    cfg = AgentConfig(trigger_len=10)
    state = initialize(ref_views(), cfg)
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 0.0))], crop=crop),
                           state, cfg, rt)
    assert state.mode == TRACK
    transitions = []
    for step in range(12):
        _, state = policy_step(obs_with([], crop=crop), state, cfg, rt)
        transitions.append(state.mode)
    assert transitions.count(PLAN) >= 1
    assert transitions[:10] == [TRACK] * 10
    assert transitions[10] == PLAN


def test_plan_reacquires_to_track():
    crop = np.zeros((16, 16))
    rt = AgentRuntime(predictor=ZeroPredictor(32), schedule=build_schedule(10))
    cfg = AgentConfig(trigger_len=2)
    state = initialize(ref_views(), cfg)
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 0.0))], crop=crop),
                           state, cfg, rt)
    for _ in range(4):
        _, state = policy_step(obs_with([], crop=crop), state, cfg, rt)
    assert state.mode == PLAN
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 1.0))], crop=crop),
                           state, cfg, rt)
    assert state.mode == TRACK
    assert state.kf is not None
    assert state.lost_count == 0


def test_plan_budget_exhaustion_returns_to_detect():
    crop = np.zeros((16, 16))
    rt = AgentRuntime(predictor=ZeroPredictor(32), schedule=build_schedule(5))
    cfg = AgentConfig(trigger_len=1, plan_exec_len=2, plan_scan_len=2,
                      replan_budget=1)
    state = initialize(ref_views(), cfg)
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 0.0))], crop=crop),
                           state, cfg, rt)
    seen = set()
    for _ in range(14):
        _, state = policy_step(obs_with([], crop=crop), state, cfg, rt)
        seen.add(state.mode)
    assert state.mode == DETECT
    assert PLAN in seen


def test_no_planner_variant_never_plans():
    crop = np.zeros((16, 16))
    rt = AgentRuntime(predictor=ZeroPredictor(32), schedule=build_schedule(5))
    cfg = AgentConfig(trigger_len=1, use_planner=False)
    state = initialize(ref_views(), cfg)
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 0.0))], crop=crop),
                           state, cfg, rt)
    for _ in range(20):
        _, state = policy_step(obs_with([], crop=crop), state, cfg, rt)
        assert state.mode == TRACK


def test_mode_machine_fuzz_transitions_legal(rng):
    """Random observation streams only produce the four legal transitions."""
    crop = np.zeros((16, 16))
    rt = AgentRuntime(predictor=ZeroPredictor(32), schedule=build_schedule(5))
    cfg = AgentConfig(trigger_len=3, plan_exec_len=3, replan_budget=1)
    legal = {(DETECT, TRACK), (TRACK, PLAN), (PLAN, TRACK), (PLAN, DETECT)}
    state = initialize(ref_views(), cfg)
    prev = state.mode
    for _ in range(300):
        roll = rng.random()
        if roll < 0.4:
            obs = obs_with([], crop=crop)
        elif roll < 0.8:
            obs = obs_with([cand(describe(TARGET_M, rng.uniform(0, 6.28)),
                                 conf=float(rng.uniform(0, 1)))], crop=crop)
        else:
            obs = obs_with([cand(describe(OTHER_M, rng.uniform(0, 6.28)),
                                 conf=float(rng.uniform(0, 1)), instance_id=1)],
                           crop=crop)
        _, state = policy_step(obs, state, cfg, rt)
        if state.mode != prev:
            assert (prev, state.mode) in legal
            prev = state.mode


def test_avg_update_variant_counts():
    cfg = AgentConfig(avg_update=True)
    state, _, rt = fresh(cfg)
    # detection tick does not enhance; the two tracking ticks do
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 0.0))]), state, cfg, rt)
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 0.6))]), state, cfg, rt)
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 1.2))]), state, cfg, rt)
    assert state.feature_count == 3  # prototype + two accepted features


def test_no_kf_variant_tracks_raw_boxes():
    cfg = AgentConfig(use_kf=False)
    state, _, rt = fresh(cfg)
    _, state = policy_step(obs_with([cand(describe(TARGET_M, 0.0),
                                          bbox=(90.0, 60.0, 20.0, 54.0))]),
                           state, cfg, rt)
    assert state.kf is None
    assert state.last_box[0] == pytest.approx(90.0)


def test_agent_config_file_roundtrip(tmp_path):
    path = tmp_path / "agent.cfg"
    path.write_text("eta_s=0.6\ntrigger_len=7\nuse_ema=false\n# comment\n")
    cfg = AgentConfig.from_file(path)
    assert cfg.eta_s == 0.6
    assert cfg.trigger_len == 7
    assert cfg.use_ema is False
    bad = tmp_path / "bad.cfg"
    bad.write_text("not_a_key=1\n")
    with pytest.raises(ValueError):
        AgentConfig.from_file(bad)


# --- closed loop smoke --------------------------------------------------------------


def test_closed_loop_holds_target(rng):
    """Visible static target, no noise: the agent centers and holds it."""
    from activetrack.runs import PRESETS, build_episode_setup
    import dataclasses
    preset = dataclasses.replace(
        PRESETS["standard"], n_obstacles=(0, 0), n_distractors=0,
        feature_noise=0.0, conf_noise=0.0, bbox_noise=0.0, target_speed=0.0)
    rewards = []
    for seed in range(5):
        setup = build_episode_setup(preset, seed)
        agent = TrackingAgent(AgentConfig(), AgentRuntime())
        log = run_episode(agent, setup, max_steps=150, lost_limit=50, seed=seed)
        assert log.error is None
        rewards.append(max(r.reward for r in log.records[-50:]))
        assert log.length == 150
    assert min(rewards) > 0.9
