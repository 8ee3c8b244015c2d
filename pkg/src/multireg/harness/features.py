"""Oracle feature providers standing in for a learned backbone.

Every dense model point gets an i.i.d. random unit descriptor. A scene point
on instance ``k`` copies the descriptor of its generating model point (the
model point nearest to its canonical position under pose ``k``), except that
with probability ``c`` the copy is replaced by a fresh random descriptor.

The corruption probability ``c`` is looked up from a calibration table so
that mutual top-1 matching on a single clean instance yields the requested
inlier ratio. Background points get independent random descriptors.
Superpoint features are patch means, centred and normalised.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..geometry import apply_transform
from ..preprocess import SuperpointGraph

FEATURE_DIM = 128

# (inlier rate, corruption probability) pairs measured by ``calibrate`` on the standard
# fixture (one clean bracket, voxel 0.03, tau1 0.05, dim 128, 20 seeds)
CALIBRATION = np.array([
    [0.00, 1.000000],
    [0.05, 0.979814],
    [0.10, 0.954240],
    [0.15, 0.930030],
    [0.20, 0.902277],
    [0.25, 0.875233],
    [0.30, 0.847925],
    [0.35, 0.817459],
    [0.40, 0.784700],
    [0.45, 0.752924],
    [0.50, 0.716119],
    [0.55, 0.673824],
    [0.60, 0.635340],
    [0.65, 0.591418],
    [0.70, 0.539196],
    [0.75, 0.484249],
    [0.80, 0.428819],
    [0.85, 0.352210],
    [0.90, 0.263950],
    [0.95, 0.147505],
    [1.00, 0.000000],
])


@dataclass
class FeatureSet:
    dense_p: np.ndarray
    dense_q: np.ndarray
    sp_p: np.ndarray
    sp_q: np.ndarray


def _centre_normalise(x: np.ndarray) -> np.ndarray:
    x = x - x.mean(axis=-1, keepdims=True)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norm > 0, norm, 1.0)


def random_descriptors(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    return _centre_normalise(rng.normal(size=(n, dim)))


def corruption_probability(inlier_rate: float) -> float:
    if not 0.0 <= inlier_rate <= 1.0:
        raise ValueError("inlier_rate must lie in [0, 1]")
    rates, probs = CALIBRATION[:, 0], CALIBRATION[:, 1]
    order = np.argsort(rates)
    return float(np.interp(inlier_rate, rates[order], probs[order]))


def generating_index(model_dense: np.ndarray, scene_dense: np.ndarray, labels: np.ndarray,
                     poses: list) -> np.ndarray:
    """Model point index behind each scene point, ``-1`` for background."""
    out = np.full(len(scene_dense), -1, dtype=np.int64)
    tree = cKDTree(model_dense)
    for k, pose in enumerate(poses, start=1):
        sel = np.nonzero(labels == k)[0]
        if len(sel) == 0:
            continue
        canon = apply_transform(pose.inverse(), scene_dense[sel])
        _, idx = tree.query(canon, k=1)
        out[sel] = idx
    return out


def superpoint_features(dense_feats: np.ndarray, graph: SuperpointGraph) -> np.ndarray:
    out = np.zeros((len(graph.superpoints), dense_feats.shape[1]))
    for i, patch in enumerate(graph.patch_of):
        if len(patch):
            out[i] = dense_feats[patch].mean(axis=0)
    return _centre_normalise(out)


def dense_oracle(model_dense, scene_dense, scene_labels, poses, corrupt: float, dim: int,
                 rng: np.random.Generator):
    f_p = random_descriptors(len(model_dense), dim, rng)
    gen = generating_index(model_dense, scene_dense, scene_labels, poses)
    f_q = random_descriptors(len(scene_dense), dim, rng)
    # background has no generating point and keeps its random descriptor
    keep = (gen >= 0) & (rng.random(len(scene_dense)) >= corrupt)
    f_q[keep] = f_p[gen[keep]]
    return f_p, f_q


def oracle_features(graph_p: SuperpointGraph, graph_q: SuperpointGraph, poses: list,
                    inlier_rate: float, dim: int = FEATURE_DIM, seed: int = 0) -> FeatureSet:
    rng = np.random.default_rng(seed)
    corrupt = corruption_probability(inlier_rate)
    labels = graph_q.dense_labels
    if labels is None:
        raise ValueError("oracle features need labelled scene points")
    f_p, f_q = dense_oracle(graph_p.dense, graph_q.dense, labels, poses, corrupt, dim, rng)
    return FeatureSet(f_p, f_q, superpoint_features(f_p, graph_p), superpoint_features(f_q, graph_q))


def random_features(graph_p: SuperpointGraph, graph_q: SuperpointGraph, dim: int = FEATURE_DIM,
                    seed: int = 0) -> FeatureSet:
    """Provider for unlabelled inputs: descriptors carry no information."""
    rng = np.random.default_rng(seed)
    f_p = random_descriptors(len(graph_p.dense), dim, rng)
    f_q = random_descriptors(len(graph_q.dense), dim, rng)
    return FeatureSet(f_p, f_q, superpoint_features(f_p, graph_p), superpoint_features(f_q, graph_q))


def mutual_nn(f_p: np.ndarray, f_q: np.ndarray) -> np.ndarray:
    """Mutual nearest neighbours by cosine similarity, as ``(m, 2)`` index pairs."""
    sim = f_p @ f_q.T
    best_q = np.argmax(sim, axis=1)
    best_p = np.argmax(sim, axis=0)
    p = np.nonzero(best_p[best_q] == np.arange(len(f_p)))[0]
    return np.column_stack([p, best_q[p]])


def measured_inlier_ratio(corrupt: float, seed: int, dim: int = FEATURE_DIM, voxel: float = 0.03,
                          tau1: float = 0.05) -> float:
    """Mutual top-1 inlier ratio on the standard single-instance fixture."""
    from ..preprocess import voxel_downsample
    from .scene import SceneSpec, generate_scene

    spec = SceneSpec(min_instances=1, max_instances=1, noise_sigma=0.0, occlusion=0.0,
                     background_ratio=0.0, seed=seed)
    model, scene, gt = generate_scene(spec)
    dm = voxel_downsample(model, voxel)
    ds = voxel_downsample(scene, voxel)
    rng = np.random.default_rng(seed + 7919)
    f_p, f_q = dense_oracle(dm.points, ds.points, ds.labels, gt.poses, corrupt, dim, rng)
    pairs = mutual_nn(f_p, f_q)
    if len(pairs) == 0:
        return 0.0
    res = np.linalg.norm(apply_transform(gt.poses[0], dm.points[pairs[:, 0]]) - ds.points[pairs[:, 1]], axis=1)
    return float(np.mean(res < tau1))


def calibrate(rates=np.linspace(0.0, 1.0, 21), seeds=range(20), dim: int = FEATURE_DIM,
              steps: int = 20) -> np.ndarray:
    """Bisect the corruption probability per target rate; returns ``(rate, c)`` rows."""
    seeds = list(seeds)

    def mean_ir(a):
        return float(np.mean([measured_inlier_ratio(a, s, dim) for s in seeds]))

    rows = []
    for r in rates:
        lo, hi = 0.0, 1.0     # inlier ratio falls as corruption grows
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            if mean_ir(mid) > r:
                lo = mid
            else:
                hi = mid
        rows.append((float(r), 0.5 * (lo + hi)))
    rows[0] = (0.0, 1.0)
    return np.array(rows)


if __name__ == "__main__":
    np.set_printoptions(precision=6, suppress=True)
    for rate, c in calibrate():
        print(f"    [{rate:.2f}, {c:.6f}],")
