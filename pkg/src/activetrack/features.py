"""Synthetic instance-feature manifolds and prototype operations.

Each tracked instance owns a manifold of unit feature vectors

    f(theta) = normalize(mean + sum_m A * sin(theta + phi_m) * basis_m)

with orthonormal ``basis_m`` orthogonal to ``mean`` and phases
phi_m = pi * m / M. With M >= 2 the view component has constant squared
norm r^2 = A^2 * M / 2, which makes the cohesion/separation bounds exact:

    intra-cos(theta1, theta2) = (1 + r^2 cos(theta1 - theta2)) / (1 + r^2)

so the worst case (antipodal views) equals ``cohesion_delta`` when
r^2 = (1 - delta) / (1 + delta). Mean directions across instances form a
regular simplex (pairwise dot -1/(K-1)), and each instance's view basis
lives in its own orthogonal subspace, so the worst inter-instance cosine
is exactly simplex_dot / (1 + r^2).
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateSum, InfeasibleGeometry, ZeroVector

DEFAULT_DIM = 64
CERT_TOL = 1e-6


def unit(v):
    """Normalize, raising on (near) zero input."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ZeroVector("cannot normalize a zero vector")
    return v / n


@dataclass(frozen=True)
class InstanceManifold:
    instance_id: int
    mean_direction: np.ndarray       # (D,) unit
    view_basis: np.ndarray           # (M, D) orthonormal, orthogonal to mean
    view_amplitude: float
    cohesion_delta: float

    @property
    def dim(self):
        return self.mean_direction.shape[0]

    @property
    def num_view_dirs(self):
        return self.view_basis.shape[0]

    def phases(self):
        m = self.num_view_dirs
        return np.pi * np.arange(m) / m


@dataclass(frozen=True)
class ManifoldSet:
    manifolds: tuple
    separation_eta: float

    @property
    def dim(self):
        return self.manifolds[0].dim

    def __len__(self):
        return len(self.manifolds)

    def __getitem__(self, i):
        return self.manifolds[i]


@dataclass(frozen=True)
class Prototype:
    """Unit-ish embedding summarizing one instance.

    Immutable by design: updates return a fresh instance, and holders
    swap the reference. A concurrent reader therefore always sees a
    complete snapshot, never a half-written vector.
    """

    vector: np.ndarray
    source_instance: int = -1
    update_count: int = 0


def _simplex_directions(k):
    # k unit vectors in k coords with pairwise dot exactly -1/(k-1)
    if k == 1:
        return np.ones((1, 1))
    eye = np.eye(k)
    centered = eye - np.full((k, k), 1.0 / k)
    return centered / np.linalg.norm(centered, axis=1, keepdims=True)


def _amplitude_for(delta, num_view_dirs):
    r2 = (1.0 - delta) / (1.0 + delta)
    if num_view_dirs == 1:
        return math.sqrt(r2)
    return math.sqrt(2.0 * r2 / num_view_dirs)


def generate_manifold_set(num_instances, dim, cohesion_delta, separation_eta,
                          num_view_dirs, seed):
    """Construct a certifiably cohesive and separated manifold set.

    Raises InfeasibleGeometry when the instances cannot fit in ``dim``
    dimensions or when even simplex mean placement cannot reach the
    requested separation bound.
    """
    if num_instances < 1:
        raise ValueError("num_instances must be >= 1")
    if not 0.0 < cohesion_delta < 1.0:
        raise ValueError("cohesion_delta must lie in (0, 1)")
    if not -1.0 < separation_eta < 1.0:
        raise ValueError("separation_eta must lie in (-1, 1)")
    if num_view_dirs < 1:
        raise ValueError("num_view_dirs must be >= 1")
    if num_view_dirs + 1 > dim:
        raise InfeasibleGeometry(
            f"need num_view_dirs + 1 <= dim, got {num_view_dirs + 1} > {dim}")

    k, m = num_instances, num_view_dirs
    needed = k + k * m
    if needed > dim:
        raise InfeasibleGeometry(
            f"{k} instances with {m} view directions need {needed} dimensions, "
            f"only {dim} available")

    r2 = (1.0 - cohesion_delta) / (1.0 + cohesion_delta)
    if k >= 2:
        simplex_dot = -1.0 / (k - 1)
        worst_inter = simplex_dot / (1.0 + r2)
        if worst_inter > separation_eta + 1e-12:
            raise InfeasibleGeometry(
                f"best achievable inter-instance cosine {worst_inter:.6f} exceeds "
                f"separation_eta {separation_eta}")

    rng = np.random.default_rng(seed)
    frame, rmat = np.linalg.qr(rng.standard_normal((dim, dim)))
    # sign-fix so the frame is a deterministic function of the Gaussian draw
    signs = np.sign(np.diag(rmat))
    signs[signs == 0] = 1.0
    frame = frame * signs

    means = _simplex_directions(k) @ frame[:, :k].T
    amplitude = _amplitude_for(cohesion_delta, m)
    manifolds = []
    for i in range(k):
        basis = frame[:, k + i * m: k + (i + 1) * m].T.copy()
        manifolds.append(InstanceManifold(
            instance_id=i,
            mean_direction=means[i],
            view_basis=basis,
            view_amplitude=amplitude,
            cohesion_delta=cohesion_delta,
        ))
    return ManifoldSet(manifolds=tuple(manifolds), separation_eta=separation_eta)


def complement_directions(mset, count, seed):
    """Unit directions orthogonal to every mean and basis vector in the set.

    Used by the simulator for appearance-drift axes that provably cannot
    disturb cross-instance separation.
    """
    used = [m.mean_direction for m in mset.manifolds]
    for m in mset.manifolds:
        used.extend(m.view_basis)
    used = np.array(used)
    dim = mset.dim
    if used.shape[0] + count > dim:
        raise InfeasibleGeometry(
            f"no room for {count} extra directions in dimension {dim}")
    # orthonormal basis of the spanned subspace (means are not orthogonal)
    u_svd, s_svd, _ = np.linalg.svd(used.T, full_matrices=False)
    span = u_svd[:, s_svd > 1e-10]
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        v = rng.standard_normal(dim)
        v = v - span @ (span.T @ v)
        for b in out:
            v = v - np.dot(v, b) * b
        n = np.linalg.norm(v)
        if n > 1e-6:
            out.append(v / n)
    return np.array(out)


def _view_component(manifold, angles):
    # (n, D) view offsets for an array of angles
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    coeffs = manifold.view_amplitude * np.sin(
        angles[:, None] + manifold.phases()[None, :])
    return coeffs @ manifold.view_basis


def describe(manifold, view_angle, noise_scale=0.0, seed=0, mean_override=None):
    """Unit feature for one view of the instance.

    ``noise_scale`` is the per-coordinate std of an additive Gaussian
    perturbation applied before normalization; it models descriptor
    imperfection and deliberately steps off the ideal manifold.
    ``seed`` may be an int or a Generator.
    """
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    mean = manifold.mean_direction if mean_override is None else mean_override
    x = mean + _view_component(manifold, view_angle)[0]
    if noise_scale > 0.0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        x = x + noise_scale * rng.standard_normal(manifold.dim)
    return unit(x)


def describe_many(manifold, angles, noise_scale=0.0, rng=None, mean_override=None):
    """Vectorized ``describe`` over an array of view angles."""
    mean = manifold.mean_direction if mean_override is None else mean_override
    x = mean[None, :] + _view_component(manifold, angles)
    if noise_scale > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        x = x + noise_scale * rng.standard_normal(x.shape)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def init_prototype(ref_feature, augmented_features, source_instance=-1):
    """Average the reference with the mean augmented feature and normalize."""
    if len(augmented_features) == 0:
        raise ValueError("augmented_features must be nonempty")
    ref = np.asarray(ref_feature, dtype=float)
    aug = np.asarray(augmented_features, dtype=float)
    if aug.ndim != 2 or aug.shape[1] != ref.shape[0]:
        raise ValueError("augmented features must share the reference dimension")
    s = ref + aug.mean(axis=0)
    n = np.linalg.norm(s)
    if n < 1e-12:
        raise DegenerateSum("reference and augmented mean cancel out")
    return Prototype(vector=s / n, source_instance=source_instance, update_count=0)


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def match_candidates(prototype, candidates, eta_s):
    """Index of the best-matching candidate, or None below threshold.

    Ties break to the lowest index; an empty candidate list yields None.
    """
    if not 0.0 < eta_s < 1.0:
        raise ValueError("eta_s must lie in (0, 1)")
    if len(candidates) == 0:
        return None
    sims = [cosine_similarity(prototype.vector, c) for c in candidates]
    best = int(np.argmax(sims))
    return best if sims[best] > eta_s else None


def ema_update(prototype, target_feature, beta):
    """Blend the prototype toward a fresh unit target feature (no renorm)."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    target = np.asarray(target_feature, dtype=float)
    if abs(np.linalg.norm(target) - 1.0) > 1e-6:
        raise ValueError("target_feature must be unit-norm")
    if beta == 1.0:
        return replace(prototype, update_count=prototype.update_count + 1)
    vec = beta * prototype.vector + (1.0 - beta) * target
    return Prototype(vector=vec, source_instance=prototype.source_instance,
                     update_count=prototype.update_count + 1)


@dataclass(frozen=True)
class CertificationReport:
    min_intra: float
    max_inter: float
    intra_ok: bool
    inter_ok: bool

    @property
    def ok(self):
        return self.intra_ok and self.inter_ok


def certify(mset, n_pairs=10000, seed=0, tol=CERT_TOL):
    """Monte-Carlo check of the cohesion/separation bounds on noise-free samples."""
    rng = np.random.default_rng(seed)
    delta = min(m.cohesion_delta for m in mset.manifolds)
    min_intra = 1.0
    for m in mset.manifolds:
        t1 = rng.uniform(0, 2 * np.pi, n_pairs)
        t2 = rng.uniform(0, 2 * np.pi, n_pairs)
        f1 = describe_many(m, t1)
        f2 = describe_many(m, t2)
        min_intra = min(min_intra, float(np.min(np.sum(f1 * f2, axis=1))))
    max_inter = -1.0
    k = len(mset.manifolds)
    if k >= 2:
        per_pair = max(1, n_pairs // (k * (k - 1) // 2))
        for i in range(k):
            for j in range(i + 1, k):
                ti = rng.uniform(0, 2 * np.pi, per_pair)
                tj = rng.uniform(0, 2 * np.pi, per_pair)
                fi = describe_many(mset[i], ti)
                fj = describe_many(mset[j], tj)
                max_inter = max(max_inter, float(np.max(np.sum(fi * fj, axis=1))))
    intra_ok = min_intra >= delta - tol
    inter_ok = k < 2 or max_inter <= mset.separation_eta + tol
    return CertificationReport(min_intra=min_intra, max_inter=max_inter,
                               intra_ok=intra_ok, inter_ok=inter_ok)


# --- serialization -----------------------------------------------------------

def manifold_set_to_dict(mset):
    return {
        "dim": mset.dim,
        "separation_eta": mset.separation_eta,
        "manifolds": [
            {
                "instance_id": m.instance_id,
                "mean_direction": [float(x) for x in m.mean_direction],
                "view_basis": [[float(x) for x in row] for row in m.view_basis],
                "view_amplitude": float(m.view_amplitude),
                "cohesion_delta": float(m.cohesion_delta),
            }
            for m in mset.manifolds
        ],
    }


def manifold_set_from_dict(doc):
    manifolds = tuple(
        InstanceManifold(
            instance_id=int(m["instance_id"]),
            mean_direction=np.array(m["mean_direction"], dtype=float),
            view_basis=np.array(m["view_basis"], dtype=float),
            view_amplitude=float(m["view_amplitude"]),
            cohesion_delta=float(m["cohesion_delta"]),
        )
        for m in doc["manifolds"]
    )
    return ManifoldSet(manifolds=manifolds, separation_eta=float(doc["separation_eta"]))


def prototype_to_dict(p):
    return {
        "vector": [float(x) for x in p.vector],
        "source_instance": int(p.source_instance),
        "update_count": int(p.update_count),
    }


def prototype_from_dict(doc):
    return Prototype(vector=np.array(doc["vector"], dtype=float),
                     source_instance=int(doc["source_instance"]),
                     update_count=int(doc["update_count"]))


def dumps(obj):
    if isinstance(obj, ManifoldSet):
        return json.dumps(manifold_set_to_dict(obj))
    if isinstance(obj, Prototype):
        return json.dumps(prototype_to_dict(obj))
    raise TypeError(f"cannot serialize {type(obj)!r}")
