import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multireg.attention import InstanceMask
from multireg.errors import EmptyFeatures, EmptySide, TooFewCorrespondences
from multireg.geometry import RigidTransform, apply_transform
from multireg.harness.metrics import gt_comembership
from multireg.harness.scene import SceneSpec, generate_scene
from multireg.matching import (InstanceCandidate, SuperpointCorrespondence, augment_scores, candidate_pose,
                               expand_candidate, match_candidate, mutual_topk, sinkhorn, sinkhorn_match,
                               sinkhorn_reference, superpoint_match)
from multireg.preprocess import build_graph

seeds = st.integers(0, 2**31 - 1)


def naive_sinkhorn(scores, iters, dustbin):
    # plain probability-domain scaling with explicit marginals
    n, m = scores.shape
    s = np.full((n + 1, m + 1), dustbin, float)
    s[:n, :m] = scores
    k = np.exp(s - s.max())
    a = np.r_[np.ones(n), m]
    b = np.r_[np.ones(m), n]
    u, v = np.ones(n + 1), np.ones(m + 1)
    for _ in range(iters):
        u = a / (k @ v)
        v = b / (k.T @ u)
    return u[:, None] * k * v[None, :]


def naive_topk(a, k):
    sel = np.zeros(a.shape, bool)
    for i in range(a.shape[0]):
        order = sorted(range(a.shape[1]), key=lambda j: (-a[i, j], j))[:k]
        sel[i, order] = True
    return sel


def test_superpoint_match_examples():
    z = np.array([[1.0, 0, 0]])
    out = superpoint_match(z, z, 5)
    assert len(out) == 1 and out[0].score == pytest.approx(1.0)
    eye = np.eye(3)
    out = superpoint_match(eye, eye, 100)
    assert len(out) == 9
    brute = sorted(((float(eye[i] @ eye[j]), i, j) for i in range(3) for j in range(3)),
                   key=lambda t: (-t[0], t[1], t[2]))
    assert [(c.score, c.p_index, c.q_index) for c in out] == brute
    with pytest.raises(EmptyFeatures):
        superpoint_match(np.zeros((0, 3)), eye)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(1, 12), st.integers(1, 12), st.integers(1, 200))
def test_superpoint_match_bruteforce(seed, n, m, n_c):
    rng = np.random.default_rng(seed)
    zp, zq = rng.normal(size=(n, 4)), rng.normal(size=(m, 4))
    # quantise to force ties
    zp, zq = np.round(zp), np.round(zq)
    zp[np.all(zp == 0, axis=1)] = 1.0
    zq[np.all(zq == 0, axis=1)] = 1.0
    cos = lambda a, b: float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    brute = sorted(((cos(zp[i], zq[j]), i, j) for i in range(n) for j in range(m)),
                   key=lambda t: (-round(t[0], 12), t[1], t[2]))[:n_c]
    got = superpoint_match(zp, zq, n_c)
    assert [(c.p_index, c.q_index) for c in got] == [(i, j) for _, i, j in brute]
    assert all(a.score >= b.score - 1e-12 for a, b in zip(got, got[1:]))


@pytest.fixture(scope="module")
def two_instances():
    model, scene, gt = generate_scene(SceneSpec(min_instances=2, max_instances=2, noise_sigma=0.0,
                                                occlusion=0.0, background_ratio=0.0, seed=3))
    gp = build_graph(model, 0.03, 4, 16)
    gq = build_graph(scene, 0.03, 4, 16)
    return gp, gq, gt


def test_expand_candidate(two_instances):
    gp, gq, _ = two_instances
    n, k = gq.knn.shape
    self_only = InstanceMask(np.eye(1, k, dtype=bool).repeat(n, axis=0), np.zeros((n, k)))
    corr = SuperpointCorrespondence(0, 5, 1.0)
    cand = expand_candidate(corr, gp, gq, self_only, cap=10**6)
    assert np.array_equal(np.sort(cand.q_points), np.sort(gq.patch_of[5]))
    assert set(cand.p_points) == set(np.concatenate([gp.patch_of[i] for i in gp.knn[0]]))
    full = expand_candidate(corr, gp, gq, InstanceMask.all_allowed(n, k), cap=10**6)
    assert set(full.q_points) == set(np.concatenate([gq.patch_of[i] for i in gq.knn[5]]))
    capped = expand_candidate(corr, gp, gq, InstanceMask.all_allowed(n, k), cap=7)
    d = np.linalg.norm(gq.dense[full.q_points] - gq.superpoints[5], axis=1)
    assert len(capped.q_points) == 7
    assert np.linalg.norm(gq.dense[capped.q_points] - gq.superpoints[5], axis=1).max() <= np.sort(d)[6]


def test_expand_candidate_gt_mask_stays_on_instance(two_instances):
    gp, gq, _ = two_instances
    allowed = gt_comembership(gq.knn, gq.superpoint_labels)
    mask = InstanceMask(allowed, allowed.astype(float))
    for q in range(len(gq.superpoints)):
        cand = expand_candidate(SuperpointCorrespondence(0, q, 1.0), gp, gq, mask, cap=10**6)
        # only mask-allowed superpoints contribute points
        allowed_sp = set(gq.knn[q][allowed[q]])
        owner = gq.point_to_superpoint
        assert set(owner[cand.q_points]) <= allowed_sp
        # and those carry the seed's label, so no dense point of the other instance sneaks in
        other = gq.dense_labels[cand.q_points] != gq.superpoint_labels[q]
        mixed = any(np.any(gq.dense_labels[gq.patch_of[s]] != gq.superpoint_labels[q]) for s in allowed_sp)
        assert not other.any() or mixed


def test_sinkhorn_single_entry():
    z = np.exp(sinkhorn(np.array([[3.7]]), 100))
    assert z[0].sum() == pytest.approx(1.0, abs=1e-6)
    got = sinkhorn_match(np.ones((1, 2)), np.ones((1, 2)))
    assert got.shape == (1, 3) and got[0, 0] == 0 and got[0, 1] == 0


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 20), st.integers(1, 20), st.floats(-2, 2))
def test_sinkhorn_marginals_and_naive(seed, n, m, dustbin):
    s = np.random.default_rng(seed).normal(scale=3.0, size=(n, m))
    log_z = sinkhorn(s, 100, dustbin)
    z = np.exp(log_z)
    assert np.all(z > 0)
    assert np.allclose(z, naive_sinkhorn(s, 100, dustbin), rtol=1e-9, atol=1e-12)
    # the last update normalises columns, so those hold exactly
    assert np.abs(z.sum(axis=0) - np.r_[np.ones(m), n]).max() < 1e-9
    assert np.abs(z[:n, :m].sum(axis=0) + z[n, :m] - 1).max() < 1e-9
    ref = sinkhorn_reference(s, 100, dustbin)
    assert np.allclose(log_z, ref, atol=1e-9)


def test_sinkhorn_rows_converge():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = rng.normal(size=(5, 5))
        z = np.exp(sinkhorn(s, 100))
        assert np.abs(z[:5].sum(axis=1) - 1).max() < 1e-4
        assert np.abs(z[:, :5].sum(axis=0) - 1).max() < 1e-4


def test_sinkhorn_large_spread_uses_log_domain():
    s = np.array([[0.0, 900.0], [-900.0, 3.0]])
    z = np.exp(sinkhorn(s, 100))
    assert np.all(np.isfinite(z))
    assert np.allclose(sinkhorn(s, 100), sinkhorn_reference(s, 100))
    assert augment_scores(s, 2.0).shape == (3, 3)
    with pytest.raises(ValueError):
        sinkhorn(s, 0)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 10), st.integers(1, 10), st.integers(1, 4))
def test_mutual_topk_recompute(seed, n, m, k):
    a = np.round(np.random.default_rng(seed).uniform(size=(n, m)), 1)   # ties on purpose
    sel = mutual_topk(a, k)
    assert np.array_equal(sel, naive_topk(a, k) & naive_topk(a.T, k).T)


def test_sinkhorn_match_diagonal():
    f = np.eye(6) * 3
    got = sinkhorn_match(f, f, mutual_k=1)
    assert sorted(map(tuple, got[:, :2].astype(int))) == [(i, i) for i in range(6)]
    with pytest.raises(EmptySide):
        sinkhorn_match(np.zeros((0, 3)), f)


def test_candidate_pose_recovery():
    rng = np.random.default_rng(1)
    t = RigidTransform.random(rng)
    dense_p = rng.normal(size=(40, 3))
    dense_q = apply_transform(t, dense_p)
    idx = np.arange(40)
    cand = InstanceCandidate(SuperpointCorrespondence(0, 0, 1.0), idx, idx,
                             np.column_stack([idx, idx, rng.uniform(0.2, 1.0, 40)]))
    pose = candidate_pose(cand, dense_p, dense_q)
    assert np.abs(pose.rotation - t.rotation).max() < 1e-6
    assert cand.pose is pose
    # 30% zero-weight outliers
    bad = rng.permutation(40)[:12]
    corrs = cand.point_corrs.copy()
    corrs[bad, 1] = (corrs[bad, 1] + 17) % 40
    corrs[bad, 2] = 0.0
    cand.point_corrs = corrs
    pose = candidate_pose(cand, dense_p, dense_q)
    assert np.abs(pose.rotation - t.rotation).max() < 1e-6
    assert np.abs(pose.translation - t.translation).max() < 1e-6
    cand.point_corrs = corrs[:2]
    with pytest.raises(TooFewCorrespondences):
        candidate_pose(cand, dense_p, dense_q)


def test_match_candidate_indices_are_dense():
    rng = np.random.default_rng(2)
    feats_p, feats_q = rng.normal(size=(30, 8)), rng.normal(size=(50, 8))
    feats_q[10:20] = feats_p[:10]
    cand = InstanceCandidate(SuperpointCorrespondence(0, 0, 1.0), np.arange(10), np.arange(10, 25))
    match_candidate(cand, feats_p, feats_q, mutual_k=1)
    assert set(cand.p_idx) <= set(cand.p_points) and set(cand.q_idx) <= set(cand.q_points)
    assert np.array_equal(cand.q_idx - 10, cand.p_idx)
    assert np.all((cand.weights > 0) & (cand.weights <= 1))
