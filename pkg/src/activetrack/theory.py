"""Empirical harnesses for the prototype-separation theory.

Three statements are checked by Monte-Carlo on noise-free manifold
samples:

* coverage: a view sweep is, on average over probe features, at least
  as close to the manifold as a single reference feature;
* averaging: the sweep mean (and the prototype built from it) sits no
  farther from the manifold than the reference it came from;
* separation: prototype sets from distinct instances end up at least as
  far apart (minimum pairwise squared distance) as the raw references.

The coverage check is an assumption, not a theorem, so its report keeps
the Monte-Carlo standard error and an adversarial probe distribution can
legitimately make it fail.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import AssumptionViolated
from .features import certify, describe_many, init_prototype

CHECK_TOL = 1e-6


@dataclass(frozen=True)
class CoverageReport:
    lhs: float
    rhs: float
    margin: float          # rhs - lhs; positive means the bound holds
    stderr: float          # Monte-Carlo standard error of the margin
    holds: bool


@dataclass(frozen=True)
class TheoryReport:
    lemma1_holds: bool
    lemma2_holds: bool
    prop1_holds: bool
    margins: dict

    @property
    def all_hold(self):
        return self.lemma1_holds and self.lemma2_holds and self.prop1_holds


def _sqdist_to_probes(points, probes):
    # (n, P) squared distances
    pn = np.sum(points * points, axis=1)
    gn = np.sum(probes * probes, axis=1)
    return pn[:, None] + gn[None, :] - 2.0 * points @ probes.T


def verify_coverage_assumption(manifold, ref_feature, augmented, probe_count,
                               seed, probe_angle_center=0.0,
                               probe_angle_halfwidth=math.pi):
    """Monte-Carlo check that the augmented set covers the manifold.

    Probes are view angles drawn uniformly from
    [center - halfwidth, center + halfwidth]; the default spans the full
    circle. ``holds`` allows the Monte-Carlo noise floor (3 standard
    errors) since the two sides coincide exactly for a symmetric sweep.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    rng = np.random.default_rng(seed)
    angles = probe_angle_center + rng.uniform(
        -probe_angle_halfwidth, probe_angle_halfwidth, probe_count)
    probes = describe_many(manifold, angles)
    aug = np.asarray(augmented, dtype=float)
    ref = np.asarray(ref_feature, dtype=float)
    lhs_per_probe = _sqdist_to_probes(aug, probes).mean(axis=0)
    rhs_per_probe = _sqdist_to_probes(ref[None, :], probes)[0]
    diff = rhs_per_probe - lhs_per_probe
    margin = float(diff.mean())
    stderr = float(diff.std(ddof=1) / math.sqrt(probe_count)) if probe_count > 1 else 0.0
    return CoverageReport(
        lhs=float(lhs_per_probe.mean()),
        rhs=float(rhs_per_probe.mean()),
        margin=margin,
        stderr=stderr,
        holds=bool(margin >= -(3.0 * stderr + 1e-9)),
    )


def sweep_angles(ref_angle, n_views):
    """Reference angle plus a uniform full-circle sweep (includes the reference)."""
    return ref_angle + 2.0 * np.pi * np.arange(n_views) / n_views


def verify_lemmas_and_proposition(mset, n_per_instance, n_views, seed,
                                  probe_count=512, tol=CHECK_TOL,
                                  cert_pairs=2000):
    """Evaluate the two averaging inequalities and the separation claim.

    For every instance, ``n_per_instance`` references are sampled at
    random view angles; each gets an ``n_views`` uniform sweep and a
    prototype. Expectations over the manifold use a fresh probe sample
    per instance; the separation claim compares exact minimum pairwise
    squared distances over the sampled sets.
    """
    if n_per_instance < 1 or n_views < 1:
        raise ValueError("n_per_instance and n_views must be >= 1")
    cert = certify(mset, n_pairs=cert_pairs, seed=seed)
    if not cert.ok:
        raise AssumptionViolated(
            f"manifold set failed certification: min intra {cert.min_intra:.6f}, "
            f"max inter {cert.max_inter:.6f}")

    rng = np.random.default_rng(seed)
    lemma1_margin = math.inf
    lemma2_margin = math.inf
    refs_by_instance = []
    protos_by_instance = []
    for m in mset.manifolds:
        ref_angles = rng.uniform(0, 2 * np.pi, n_per_instance)
        probes = describe_many(m, rng.uniform(0, 2 * np.pi, probe_count))
        refs = describe_many(m, ref_angles)
        protos = np.empty_like(refs)
        for r in range(n_per_instance):
            aug = describe_many(m, sweep_angles(ref_angles[r], n_views))
            avg = aug.mean(axis=0)
            proto = init_prototype(refs[r], aug, source_instance=m.instance_id)
            protos[r] = proto.vector
            rhs = _sqdist_to_probes(refs[r][None, :], probes)[0].mean()
            lhs_avg = _sqdist_to_probes(avg[None, :], probes)[0].mean()
            lhs_proto = _sqdist_to_probes(protos[r][None, :], probes)[0].mean()
            lemma1_margin = min(lemma1_margin, float(rhs - lhs_avg))
            lemma2_margin = min(lemma2_margin, float(rhs - lhs_proto))
        refs_by_instance.append(refs)
        protos_by_instance.append(protos)

    prop1_margin = math.inf
    k = len(mset.manifolds)
    for i in range(k):
        for j in range(i + 1, k):
            min_ref = float(_sqdist_to_probes(
                refs_by_instance[i], refs_by_instance[j]).min())
            min_proto = float(_sqdist_to_probes(
                protos_by_instance[i], protos_by_instance[j]).min())
            prop1_margin = min(prop1_margin, min_proto - min_ref)

    margins = {
        "lemma1": lemma1_margin,
        "lemma2": lemma2_margin,
        "prop1": prop1_margin if k >= 2 else math.inf,
    }
    return TheoryReport(
        lemma1_holds=bool(lemma1_margin >= -tol),
        lemma2_holds=bool(lemma2_margin >= -tol),
        prop1_holds=bool(margins["prop1"] >= -tol),
        margins=margins,
    )
