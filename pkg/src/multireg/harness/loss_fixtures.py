"""Ground-truth matches for evaluating the training losses on synthetic scenes."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..geometry import apply_transform
from ..preprocess import SuperpointGraph


def gt_superpoint_matches(graph_p: SuperpointGraph, graph_q: SuperpointGraph, poses: list,
                          tau1: float, n_g: int = 128, seed: int = 0) -> np.ndarray:
    """Sampled ``(m, 3)`` rows ``(p superpoint, q superpoint, overlap)``.

    Each scene patch is explained by the ground-truth pose under which most of
    its points land within ``tau1`` of the model. Its partner is the model
    superpoint owning most of those points; ``overlap`` is their share of the
    scene patch. At most ``n_g`` rows are kept, sampled without replacement.
    """
    owner = graph_p.point_to_superpoint
    moved = [apply_transform(pose, graph_p.dense) for pose in poses]
    trees = [cKDTree(m) for m in moved]
    rows = []
    for j, patch in enumerate(graph_q.patch_of):
        if len(patch) == 0 or not trees:
            continue
        pts = graph_q.dense[patch]
        best, best_idx = -1, None
        for tree in trees:
            d, idx = tree.query(pts, k=1)
            hit = d < tau1
            # strict improvement keeps the lower pose index on ties
            if hit.sum() > best:
                best, best_idx = int(hit.sum()), idx[hit]
        if best <= 0:
            continue
        counts = np.bincount(owner[best_idx], minlength=len(graph_p.superpoints))
        i = int(np.argmax(counts))
        rows.append((i, j, counts[i] / len(patch)))
    out = np.array(rows, dtype=np.float64).reshape(-1, 3)
    if len(out) > n_g:
        keep = np.sort(np.random.default_rng(seed).choice(len(out), n_g, replace=False))
        out = out[keep]
    return out


def gt_point_pairs(graph_p: SuperpointGraph, graph_q: SuperpointGraph, pose, p_sp: int, q_sp: int,
                   tau1: float):
    """Point-level targets inside one patch pair, as local patch indices.

    Returns ``(pairs, unmatched_p, unmatched_q)``: mutual nearest neighbours
    under ``pose`` closer than ``tau1``, and the remaining points of each side.
    """
    pp = graph_p.patch_of[p_sp]
    qq = graph_q.patch_of[q_sp]
    if len(pp) == 0 or len(qq) == 0:
        return np.zeros((0, 2), np.int64), np.arange(len(pp)), np.arange(len(qq))
    src = apply_transform(pose, graph_p.dense[pp])
    tgt = graph_q.dense[qq]
    d_pq, nn_q = cKDTree(tgt).query(src, k=1)
    _, nn_p = cKDTree(src).query(tgt, k=1)
    p_idx = np.nonzero((nn_p[nn_q] == np.arange(len(pp))) & (d_pq < tau1))[0]
    pairs = np.column_stack([p_idx, nn_q[p_idx]]).astype(np.int64)
    unmatched_p = np.setdiff1d(np.arange(len(pp)), pairs[:, 0])
    unmatched_q = np.setdiff1d(np.arange(len(qq)), pairs[:, 1])
    return pairs, unmatched_p, unmatched_q
