import math

import numpy as np
import pytest

from activetrack.errors import AssumptionViolated
from activetrack.features import (InstanceManifold, ManifoldSet, describe_many,
                                  generate_manifold_set)
from activetrack.theory import (sweep_angles, verify_coverage_assumption,
                                verify_lemmas_and_proposition)


def test_jensen_step_exact(rng):
    """mean(f_i) is never farther from any g than the average feature is."""
    for _ in range(100):
        feats = rng.standard_normal((6, 16))
        g = rng.standard_normal(16)
        lhs = np.sum((feats.mean(axis=0) - g) ** 2)
        rhs = np.mean(np.sum((feats - g) ** 2, axis=1))
        assert lhs <= rhs + 1e-9


def test_coverage_holds_for_uniform_sweep(default_manifolds):
    m = default_manifolds[0]
    ref = describe_many(m, [2.8])[0]
    aug = describe_many(m, sweep_angles(2.8, 16))
    report = verify_coverage_assumption(m, ref, aug, probe_count=5000, seed=1)
    assert report.holds
    assert report.lhs == pytest.approx(report.rhs, abs=0.02)


def test_coverage_equality_for_repeated_reference(default_manifolds):
    m = default_manifolds[1]
    ref = describe_many(m, [0.4])[0]
    report = verify_coverage_assumption(m, ref, np.tile(ref, (4, 1)),
                                        probe_count=2000, seed=2)
    assert report.holds
    assert report.margin == pytest.approx(0.0, abs=1e-12)


def test_coverage_fails_for_adversarial_clustering(default_manifolds):
    """Augmentations opposite the probe mode violate the assumption."""
    m = default_manifolds[2]
    ref = describe_many(m, [0.0])[0]
    aug = describe_many(m, np.full(8, np.pi))
    report = verify_coverage_assumption(m, ref, aug, probe_count=3000, seed=3,
                                        probe_angle_center=0.0,
                                        probe_angle_halfwidth=0.3)
    assert not report.holds
    assert report.margin < -0.05


def test_lemmas_and_proposition_hold(default_manifolds):
    report = verify_lemmas_and_proposition(default_manifolds, n_per_instance=20,
                                           n_views=8, seed=11)
    assert report.all_hold
    assert report.margins["lemma1"] > 0.01
    assert report.margins["lemma2"] > 0.01
    assert report.margins["prop1"] > 0.001


def test_prototype_equals_reference_degenerate_case():
    """Augmentations identical to the reference give margin-zero equality."""
    mset = generate_manifold_set(2, 64, 0.8, 0.2, num_view_dirs=4, seed=5)
    report = verify_lemmas_and_proposition(mset, n_per_instance=10, n_views=1,
                                           seed=6)
    # n_views=1 makes the sweep the reference itself: prototype == reference
    assert report.prop1_holds
    assert abs(report.margins["prop1"]) < 1e-9


def test_single_instance_vacuous_proposition():
    mset = generate_manifold_set(1, 16, 0.8, 0.0, num_view_dirs=2, seed=8)
    report = verify_lemmas_and_proposition(mset, n_per_instance=5, n_views=4,
                                           seed=9)
    assert report.lemma1_holds and report.lemma2_holds
    assert report.prop1_holds
    assert report.margins["prop1"] == math.inf


def test_uncertified_set_rejected():
    good = generate_manifold_set(2, 64, 0.8, 0.2, num_view_dirs=4, seed=12)
    # sabotage separation: point both means the same way
    bad0 = good.manifolds[0]
    bad1 = InstanceManifold(instance_id=1,
                            mean_direction=bad0.mean_direction,
                            view_basis=good.manifolds[1].view_basis,
                            view_amplitude=bad0.view_amplitude,
                            cohesion_delta=bad0.cohesion_delta)
    broken = ManifoldSet(manifolds=(bad0, bad1), separation_eta=0.2)
    with pytest.raises(AssumptionViolated):
        verify_lemmas_and_proposition(broken, n_per_instance=5, n_views=4, seed=13)
