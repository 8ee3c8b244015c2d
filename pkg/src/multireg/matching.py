"""Superpoint matching, instance candidate expansion and point-level matching."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .attention import InstanceMask
from .errors import EmptyFeatures, EmptySide, TooFewCorrespondences
from .geometry import RigidTransform, weighted_svd
from .preprocess import SuperpointGraph

DUSTBIN_SCORE = 1.0
SINKHORN_ITERS = 100
MUTUAL_K = 3
CANDIDATE_CAP = 512
MATCH_TEMPERATURE = 0.1
# the kernel form is used when exp of the score spread stays well inside float64
_KERNEL_SPREAD = 500.0


@dataclass(frozen=True)
class SuperpointCorrespondence:
    p_index: int
    q_index: int
    score: float


@dataclass
class InstanceCandidate:
    seed: SuperpointCorrespondence
    p_points: np.ndarray
    q_points: np.ndarray
    # (m, 3) rows of (p_idx, q_idx, score); indices refer to the dense clouds
    point_corrs: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    pose: Optional[RigidTransform] = None

    @property
    def p_idx(self) -> np.ndarray:
        return self.point_corrs[:, 0].astype(np.int64)

    @property
    def q_idx(self) -> np.ndarray:
        return self.point_corrs[:, 1].astype(np.int64)

    @property
    def weights(self) -> np.ndarray:
        return self.point_corrs[:, 2]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norm > 0, norm, 1.0)


def superpoint_match(z_p, z_q, n_c: int = 128) -> list:
    """Top ``n_c`` superpoint pairs by cosine similarity, ties by ``(i, j)``."""
    z_p = np.asarray(z_p, dtype=np.float64)
    z_q = np.asarray(z_q, dtype=np.float64)
    if z_p.size == 0 or z_q.size == 0 or len(z_p) == 0 or len(z_q) == 0:
        raise EmptyFeatures("superpoint matching needs features on both sides")
    if n_c < 1:
        raise ValueError("n_c must be positive")
    sim = np.clip(_unit_rows(z_p) @ _unit_rows(z_q).T, -1.0, 1.0)
    flat = sim.reshape(-1)
    # flat index order equals (i, j) order, so a stable sort on -score breaks ties;
    # rounding first lets scores that differ only by normalisation noise tie
    order = np.argsort(-np.round(flat, 12), kind="stable")[:n_c]
    m = sim.shape[1]
    return [SuperpointCorrespondence(int(f // m), int(f % m), float(flat[f])) for f in order]


def _nearest_first(points: np.ndarray, idx: np.ndarray, centre: np.ndarray, cap: int) -> np.ndarray:
    d = np.linalg.norm(points[idx] - centre, axis=1)
    order = np.lexsort((idx, d))
    return idx[order[:cap]]


def expand_candidate(corr: SuperpointCorrespondence, graph_p: SuperpointGraph,
                     graph_q: SuperpointGraph, mask_q: InstanceMask,
                     cap: int = CANDIDATE_CAP) -> InstanceCandidate:
    """Gather the dense points around both seed superpoints.

    Model side: patches of every kNN neighbour of the seed. Scene side: only
    patches of neighbours the instance mask allows. Each side keeps the
    ``cap`` points nearest to its seed superpoint.
    """
    nb_p = graph_p.knn[corr.p_index]
    row = graph_q.knn[corr.q_index]
    nb_q = row[mask_q.allowed[corr.q_index]]

    def gather(graph, nbs):
        parts = [graph.patch_of[i] for i in nbs]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    p_pts = _nearest_first(graph_p.dense, gather(graph_p, nb_p), graph_p.superpoints[corr.p_index], cap)
    q_pts = _nearest_first(graph_q.dense, gather(graph_q, nb_q), graph_q.superpoints[corr.q_index], cap)
    return InstanceCandidate(corr, p_pts, q_pts)


def _marginals(n: int, m: int):
    log_a = np.concatenate([np.zeros(n), [np.log(m)]]) if m else np.zeros(n + 1)
    log_b = np.concatenate([np.zeros(m), [np.log(n)]]) if n else np.zeros(m + 1)
    return log_a, log_b


def augment_scores(scores, dustbin: float = DUSTBIN_SCORE) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    n, m = s.shape
    out = np.full((n + 1, m + 1), float(dustbin))
    out[:n, :m] = s
    return out


def sinkhorn_reference(scores, iters: int = SINKHORN_ITERS, dustbin: float = DUSTBIN_SCORE) -> np.ndarray:
    """Plain log-domain Sinkhorn; returns the log assignment with dustbins.

    Real rows and columns carry unit mass, the dustbin row carries ``m`` and
    the dustbin column ``n``. Each round normalises rows, then columns.
    """
    s = augment_scores(scores, dustbin)
    n, m = s.shape[0] - 1, s.shape[1] - 1
    log_a, log_b = _marginals(n, m)
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    for _ in range(iters):
        u = log_a - logsumexp(s + v[None, :], axis=1)
        v = log_b - logsumexp(s + u[:, None], axis=0)
    return s + u[:, None] + v[None, :]


def sinkhorn(scores, iters: int = SINKHORN_ITERS, dustbin: float = DUSTBIN_SCORE) -> np.ndarray:
    """Same fixed point as :func:`sinkhorn_reference`, computed faster.

    The iteration runs on a max-shifted exponential kernel with scaling
    vectors when the score spread allows it, and falls back to the log
    domain otherwise.
    """
    s = augment_scores(scores, dustbin)
    n, m = s.shape[0] - 1, s.shape[1] - 1
    if iters < 1:
        raise ValueError("iters must be >= 1")
    shift = s.max()
    if shift - s.min() > _KERNEL_SPREAD:
        return sinkhorn_reference(scores, iters, dustbin)
    kern = np.exp(s - shift)
    log_a, log_b = _marginals(n, m)
    a, b = np.exp(log_a), np.exp(log_b)
    c = np.ones(m + 1)
    for _ in range(iters):
        r = a / (kern @ c)
        c = b / (kern.T @ r)
    return s - shift + np.log(r)[:, None] + np.log(c)[None, :]


def _topk_mask(a: np.ndarray, k: int) -> np.ndarray:
    # k rounds of argmax along rows; argmax returns the first maximum, so
    # ties go to the lower column index
    work = a.copy()
    sel = np.zeros(a.shape, dtype=bool)
    rows = np.arange(a.shape[0])
    for _ in range(min(k, a.shape[1])):
        j = np.argmax(work, axis=1)
        sel[rows, j] = True
        work[rows, j] = -np.inf
    return sel


def mutual_topk(assign: np.ndarray, k: int = MUTUAL_K) -> np.ndarray:
    """Boolean matrix of pairs in each other's top-``k`` (ties by index)."""
    a = np.asarray(assign, dtype=np.float64)
    return _topk_mask(a, k) & _topk_mask(a.T, k).T


def sinkhorn_match(feat_p, feat_q, iters: int = SINKHORN_ITERS, mutual_k: int = MUTUAL_K,
                   dustbin: float = DUSTBIN_SCORE, temperature: float = MATCH_TEMPERATURE) -> np.ndarray:
    """Point matches as ``(m, 3)`` rows ``(local p index, local q index, probability)``.

    Scores are feature dot products divided by ``temperature``; the returned
    probability is the optimal-transport assignment of the pair.
    """
    fp = np.asarray(feat_p, dtype=np.float64)
    fq = np.asarray(feat_q, dtype=np.float64)
    if len(fp) == 0 or len(fq) == 0:
        raise EmptySide("optimal-transport matching needs points on both sides")
    log_z = sinkhorn(fp @ fq.T / temperature, iters, dustbin)
    z = np.exp(log_z[:-1, :-1])
    sel = mutual_topk(z, mutual_k)
    i, j = np.nonzero(sel)
    return np.column_stack([i, j, z[i, j]])


def match_candidate(cand: InstanceCandidate, feat_p_dense, feat_q_dense, **kw) -> InstanceCandidate:
    """Fill ``cand.point_corrs`` with dense-cloud indices."""
    if len(cand.p_points) == 0 or len(cand.q_points) == 0:
        cand.point_corrs = np.zeros((0, 3))
        return cand
    local = sinkhorn_match(feat_p_dense[cand.p_points], feat_q_dense[cand.q_points], **kw)
    pi = cand.p_points[local[:, 0].astype(np.int64)]
    qi = cand.q_points[local[:, 1].astype(np.int64)]
    cand.point_corrs = np.column_stack([pi, qi, local[:, 2]])
    return cand


def candidate_pose(cand: InstanceCandidate, dense_p, dense_q) -> RigidTransform:
    """Weighted Procrustes over the candidate's matches; stored on ``cand``."""
    if len(cand.point_corrs) < 3:
        raise TooFewCorrespondences(f"{len(cand.point_corrs)} correspondences, need 3")
    dense_p = np.asarray(dense_p, dtype=np.float64)
    dense_q = np.asarray(dense_q, dtype=np.float64)
    pose = weighted_svd(dense_p[cand.p_idx], dense_q[cand.q_idx], cand.weights)
    cand.pose = pose
    return pose
