import dataclasses
import hashlib
import json

import numpy as np
import pytest

from activetrack.errors import SamplingExhausted
from activetrack.grid import world_to_cell
from activetrack.scenarios import (ARCHETYPES, ScenarioParams, generate_dataset,
                                   load_dataset, make_sample, sample_scenario)
from activetrack.world import Camera, Pose, visibility


@pytest.fixture(scope="module")
def params():
    return ScenarioParams()


def sample_of(archetype, seed, params, **kwargs):
    rng = np.random.default_rng(seed)
    return sample_scenario(archetype, rng, params, **kwargs)


def solvable_sample(archetype, seed, params):
    """Scenario + expert sample, retrying like the dataset generator does."""
    from activetrack.errors import NoPath
    for attempt in range(10):
        rng = np.random.default_rng((seed, attempt))
        sc = sample_scenario(archetype, rng, params)
        try:
            return sc, make_sample(sc, params)
        except NoPath:
            continue
    raise AssertionError("no solvable scenario within the attempt budget")


def test_every_archetype_partially_occluded(params):
    for arch in ARCHETYPES:
        for seed in range(5):
            sc = sample_of(arch, seed, params)
            assert sc.target_visibility < 1.0
            assert sc.archetype == arch


def test_corridor_has_three_occluders(params):
    sc = sample_of("corridor", 1, params)
    assert len(sc.world.obstacles) >= 3


def test_single_side_blocks_one_flank(params):
    sc = sample_of("single_side", 2, params)
    assert len(sc.world.obstacles) >= 1
    assert 0.0 <= sc.target_visibility < 1.0


def test_zero_obstacle_budget_exhausts():
    p = ScenarioParams(max_obstacles=0, max_retries=20)
    with pytest.raises(SamplingExhausted):
        sample_of("single_side", 0, p)


def test_make_sample_contract(params):
    sc, s = solvable_sample("single_side", 3, params)
    assert s.traj.shape == (16, 2)
    assert np.all(np.abs(s.traj) <= 1.0)
    assert np.all(np.isfinite(s.traj))
    assert s.obs.shape == (256,)
    assert set(np.unique(s.obs)).issubset({0.0, 1.0})
    assert np.all((s.bbox >= 0.0) & (s.bbox <= 1.0))
    # first waypoint within one cell of the tracker cell
    start_world = s.traj[0] * params.plan_radius
    assert np.linalg.norm(start_world) <= params.resolution * 1.5


def test_expert_waypoints_collision_free(params):
    for arch in ARCHETYPES:
        for seed in range(4):
            sc, s = solvable_sample(arch, 10 + seed, params)
            yaw = s.pose[2]
            rot = np.array([[np.cos(yaw), -np.sin(yaw)],
                            [np.sin(yaw), np.cos(yaw)]])
            world_pts = (rot @ (s.traj * params.plan_radius).T).T + s.pose[:2]
            for x, y in world_pts:
                r, c = world_to_cell(s.grid, x, y)
                assert not s.grid.occupied[r, c], (arch, seed, (x, y))


def test_expert_endpoint_regains_sight(params):
    for seed in range(4):
        sc, s = solvable_sample("single_side", 30 + seed, params)
        yaw = s.pose[2]
        rot = np.array([[np.cos(yaw), -np.sin(yaw)],
                        [np.sin(yaw), np.cos(yaw)]])
        end = rot @ (s.traj[-1] * params.plan_radius) + s.pose[:2]
        probe = Camera(pose=Pose(end[0], end[1], 0.0),
                       cam_height=params.cam_height)
        vis_end = visibility(sc.world, probe, sc.target, n_rays=params.n_rays)
        # the trajectory may stop at the plan radius, but it must not end blind
        assert vis_end > sc.target_visibility or vis_end >= params.goal_visibility


def test_visible_target_degenerate_trajectory():
    # high-visibility spawns are filtered from datasets but remain valid
    # inputs: the expert path then collapses to (near) staying put
    loose = ScenarioParams(max_start_visibility=1.0)
    for seed in range(300):
        sc, s = solvable_sample("single_side", 100 + seed, loose)
        if sc.target_visibility >= loose.goal_visibility:
            assert np.linalg.norm(s.traj[-1]) < 0.2
            break
    else:
        pytest.skip("no near-visible scenario drawn")


def test_dataset_counts_and_mix(tmp_path, params):
    out = tmp_path / "data.jsonl"
    info = generate_dataset(9, randomized_fraction=0.6, seed=5, out_path=out,
                            params=params)
    assert info.n == 9
    assert info.n_randomized == 5
    assert info.archetype_counts == {a: 3 for a in ARCHETYPES}
    samples = load_dataset(out)
    assert len(samples) == 9
    assert sum(s.randomized for s in samples) == 5
    assert [s.archetype for s in samples[:3]] == list(ARCHETYPES)


def test_dataset_deterministic(tmp_path, params):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    info_a = generate_dataset(6, 0.5, seed=9, out_path=a, params=params)
    info_b = generate_dataset(6, 0.5, seed=9, out_path=b, params=params)
    assert a.read_bytes() == b.read_bytes()
    assert info_a.sha256 == info_b.sha256
    info_c = generate_dataset(6, 0.5, seed=10, out_path=b, params=params)
    assert info_c.sha256 != info_a.sha256


def test_dataset_schema(tmp_path, params):
    out = tmp_path / "schema.jsonl"
    generate_dataset(3, 1.0, seed=2, out_path=out, params=params)
    with open(out) as fh:
        doc = json.loads(fh.readline())
    assert list(doc) == ["id", "archetype", "randomized", "pose", "obs", "bbox",
                         "traj", "grid"]
    assert set(doc["grid"]) == {"resolution", "w", "h", "rle"}
    assert len(doc["obs"]) == 256
    assert len(doc["bbox"]) == 4
    assert len(doc["traj"]) == 16


def test_persisted_trajectories_replay_collision_free(tmp_path, params):
    out = tmp_path / "replay.jsonl"
    generate_dataset(12, 0.5, seed=21, out_path=out, params=params)
    for s in load_dataset(out):
        yaw = s.pose[2]
        rot = np.array([[np.cos(yaw), -np.sin(yaw)],
                        [np.sin(yaw), np.cos(yaw)]])
        pts = (rot @ (s.traj * params.plan_radius).T).T + s.pose[:2]
        for x, y in pts:
            r, c = world_to_cell(s.grid, x, y)
            assert not s.grid.occupied[r, c]
