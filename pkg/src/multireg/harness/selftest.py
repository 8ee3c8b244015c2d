"""Quick oracle corpus: every check compares a library result with an
independent, naive computation. Used by ``multireg selftest``."""
from __future__ import annotations

import time

import numpy as np

from ..attention import AttentionLayer, WeightSet, local_attention
from ..embedding import EmbeddingConfig, geometric_structure_embedding, sinusoidal_embed
from ..geometry import RigidTransform, add_s_distance, apply_transform, weighted_svd
from ..losses import LossConfig, circle_loss, mask_loss, nll_matching_loss
from ..matching import mutual_topk, sinkhorn
from ..preprocess import PointCloud, geodesic_table, knn_table, point_to_node, voxel_downsample
from ..selection import GlobalCorrespondences, global_inlier_ratio
from .metrics import f1_score, inlier_ratio_metric
from .ransac import sequential_ransac

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


def _pose_err(a: RigidTransform, b: RigidTransform) -> float:
    return max(np.abs(a.rotation - b.rotation).max(), np.abs(a.translation - b.translation).max())


@check
def kabsch_recovery():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        t = RigidTransform.random(rng)
        src = rng.normal(size=(int(rng.integers(10, 101)), 3))
        worst = max(worst, _pose_err(weighted_svd(src, apply_transform(t, src)), t))
    return worst < 1e-9, f"max error {worst:.2e}"


@check
def zero_weight_neutrality():
    rng = np.random.default_rng(2)
    t = RigidTransform.random(rng)
    src = rng.normal(size=(10, 3))
    tgt = apply_transform(t, src)
    tgt[9] += 50.0
    w = np.ones(10)
    w[9] = 0.0
    err = _pose_err(weighted_svd(src, tgt, w), t)
    return err < 1e-9, f"error {err:.2e}"


@check
def add_s_bruteforce():
    rng = np.random.default_rng(3)
    model = rng.normal(size=(3, 3))
    t2 = RigidTransform(np.eye(3), np.array([0.3, 0.0, 0.0]))
    a, b = model, model + t2.translation
    expected = np.mean([min(np.linalg.norm(x - y) for y in b) for x in a])
    got = add_s_distance(RigidTransform.identity(), t2, model)
    return abs(got - expected) < 1e-12, f"{got:.6f} vs {expected:.6f}"


@check
def voxel_octants():
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 1, size=(1000, 3))
    got = voxel_downsample(PointCloud(pts), 0.5).points
    keys = np.floor(pts / 0.5).astype(int)
    expected = {tuple(k): pts[(keys == k).all(axis=1)].mean(axis=0) for k in np.unique(keys, axis=0)}
    ok = len(got) == len(expected) and all(
        min(np.abs(g - e).max() for g in got) < 1e-12 for e in expected.values())
    return ok, f"{len(got)} voxels"


@check
def knn_and_partition():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(50, 3))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    ok = np.array_equal(knn_table(pts, 8), np.argsort(d, axis=1, kind="stable")[:, :8])
    dense = rng.normal(size=(200, 3))
    sp = dense[:10] + 0.01
    patches = point_to_node(dense, sp)
    owner = np.argmin(np.linalg.norm(dense[:, None] - sp[None], axis=2), axis=1)
    ok &= all(np.array_equal(np.sort(patches[i]), np.nonzero(owner == i)[0]) for i in range(10))
    return bool(ok), "kNN and patches match exhaustive scans"


@check
def geodesic_c_shape():
    # six nodes on a C; the tips are close in space but far along the arc
    ang = np.deg2rad([20, 80, 140, 220, 280, 340])
    sp = np.column_stack([np.cos(ang), np.sin(ang), np.zeros(6)])
    # slot 1 holds the arc neighbour, slot 2 anything else; only slot 1 forms edges
    knn = np.array([[0, 1, 5], [1, 2, 0], [2, 3, 1], [3, 4, 2], [4, 5, 3], [5, 4, 0]])
    geo = geodesic_table(sp, knn, graph_k=2)
    arc = sum(np.linalg.norm(sp[i + 1] - sp[i]) for i in range(5))
    eucl = np.linalg.norm(sp[5] - sp[0])
    ok = abs(geo[0, 2] - arc) < 1e-12 and geo[0, 2] > 2 * eucl
    return ok, f"tip-to-tip {geo[0, 2]:.4f}, arc {arc:.4f}, chord {eucl:.4f}"


@check
def sinusoid_formula():
    e = sinusoidal_embed(0.7, 0.7, 2)
    return np.allclose(e, [np.sin(1.0), np.cos(1.0)], atol=1e-15, rtol=0), str(e)


@check
def embedding_rigid_invariance():
    rng = np.random.default_rng(6)
    cfg = EmbeddingConfig(dim=32)
    pts = rng.normal(size=(30, 3))
    knn = knn_table(pts, 6)
    base = geometric_structure_embedding(pts, knn, cfg)
    worst = 0.0
    for _ in range(20):
        moved = apply_transform(RigidTransform.random(rng), pts)
        worst = max(worst, np.abs(geometric_structure_embedding(moved, knn, cfg) - base).max())
    return worst < 1e-6, f"max deviation {worst:.2e}"


@check
def masked_attention_equals_reduced():
    rng = np.random.default_rng(7)
    w = WeightSet.random(8, d=8, heads=2, n_iters=1, d_t=4, seed=7)
    layer: AttentionLayer = w.modules[0].geo
    n, k = 6, 4
    x = rng.normal(size=(n, 8))
    knn = np.array([[i] + list(rng.choice([j for j in range(n) if j != i], k - 1, replace=False))
                    for i in range(n)])
    emb = rng.normal(size=(n, k, 4))
    allowed = rng.random((n, k)) < 0.6
    allowed[:, 0] = True
    out = local_attention(x, knn, emb, np.where(allowed, 0.0, -np.inf), layer, 2)
    worst = 0.0
    for i in range(n):
        keep = np.nonzero(allowed[i])[0]
        # every row gets anchor i's reduced list; row i is then the reference
        rows = np.tile(knn[i, keep], (n, 1))
        ref = local_attention(x, rows, np.repeat(emb[i:i + 1, keep], n, axis=0), None, layer, 2)[i]
        worst = max(worst, np.abs(out[i] - ref).max())
    return worst < 1e-9, f"max deviation {worst:.2e}"


@check
def sinkhorn_marginals():
    rng = np.random.default_rng(8)
    s = rng.normal(size=(5, 7))
    z = np.exp(sinkhorn(s, 100))
    err = max(np.abs(z[:5].sum(axis=1) - 1).max(), np.abs(z[:, :7].sum(axis=0) - 1).max())
    return err < 1e-4, f"marginal error {err:.2e}"


@check
def mutual_top1_identity():
    s = np.eye(6) * 5 + np.random.default_rng(9).uniform(0, 0.1, (6, 6))
    sel = mutual_topk(s, 1)
    return np.array_equal(sel, np.eye(6, dtype=bool)), "diagonal pairs"


@check
def inlier_ratio_half():
    rng = np.random.default_rng(10)
    t = RigidTransform.random(rng)
    src = rng.normal(size=(10, 3))
    tgt = apply_transform(t, src)
    tgt[5:] += 1.0
    r = global_inlier_ratio(t, GlobalCorrespondences(src, tgt), 0.05)
    ir = inlier_ratio_metric(src, tgt, [t], 0.05)
    return r == 0.5 and ir == 0.5, f"{r}, {ir}"


@check
def ransac_two_instances():
    rng = np.random.default_rng(11)
    poses = [RigidTransform.random(rng), RigidTransform(np.eye(3), np.array([20.0, 0, 0]))]
    src = rng.normal(size=(40, 3))
    tgt = np.vstack([apply_transform(p, src[i * 20:(i + 1) * 20]) for i, p in enumerate(poses)])
    got = sequential_ransac(src, tgt, 0.05, max_models=4, seed=0)
    ok = len(got) == 2 and all(min(_pose_err(g, p) for g in got) < 1e-6 for p in poses)
    return ok, f"{len(got)} poses"


@check
def loss_closed_forms():
    cfg = LossConfig()
    a = np.zeros((1, 3))
    pos = [np.array([[cfg.delta_p, 0, 0]])]
    neg = [np.array([[cfg.delta_n, 0, 0]])]
    c = circle_loss(a, pos, [np.ones(1)], neg, cfg)
    nll = nll_matching_loss(np.array([[0.5, 0, 0], [0, 0.5, 0], [0, 0, 0]]), [[0, 0], [1, 1]])
    n = 7
    ml = mask_loss(np.ones(n), np.ones(n))
    ok = (abs(c - np.log(2)) < 1e-12 and abs(nll - 2 * np.log(2)) < 1e-12
          and abs(ml - (1 - 2 * (n + 1) / (2 * n + 1))) < 1e-12)
    return ok, f"circle {c:.6f}, nll {nll:.6f}, mask {ml:.6f}"


@check
def f1_fixture():
    mf = f1_score(0.3851, 0.4119)
    return abs(mf - 0.3980) < 1e-4, f"{mf:.4f}"


def run(verbose: bool = True) -> bool:
    all_ok = True
    for fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:           # a crash is a failed check, keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {fn.__name__} ({detail}; {time.perf_counter() - t0:.2f}s)")
    return all_ok
