"""Inlier-ratio ranking, ADD-similarity NMS merging and pose refinement."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration, EmptyCorrespondences
from .geometry import RigidTransform, add_distance, apply_transform, weighted_svd

SIMILARITY_POINTS = 1024


@dataclass
class PoseHypothesis:
    pose: RigidTransform
    # (m, 3) rows of (p_idx, q_idx, weight) into the dense clouds
    corrs: np.ndarray
    inlier_ratio: float = 0.0
    order_key: tuple = ()
    inlier_count: int = 0


@dataclass(frozen=True)
class SelectionConfig:
    tau2: float = 0.05
    tau_s: float = 0.8
    tau3: float = 0.8
    refine_iters: int = 5
    diameter: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.tau_s <= 1.0:
            raise ValueError("tau_s must lie in (0, 1]")
        if not 0.0 <= self.tau3 <= 1.0:
            raise ValueError("tau3 must lie in [0, 1]")
        if not self.diameter > 0 or not self.tau2 > 0:
            raise ValueError("diameter and tau2 must be positive")


@dataclass
class GlobalCorrespondences:
    """Union of all candidate matches, as coordinate pairs."""

    src: np.ndarray
    tgt: np.ndarray

    def __len__(self):
        return len(self.src)


def _inlier_mask(pose: RigidTransform, src, tgt, tau2: float) -> np.ndarray:
    return np.linalg.norm(apply_transform(pose, src) - tgt, axis=1) < tau2


def global_inlier_ratio(pose: RigidTransform, global_corrs: GlobalCorrespondences, tau2: float) -> float:
    """Fraction of all correspondences that ``pose`` maps within ``tau2``."""
    if len(global_corrs) == 0:
        raise EmptyCorrespondences("inlier ratio over an empty correspondence set")
    return float(np.mean(_inlier_mask(pose, global_corrs.src, global_corrs.tgt, tau2)))


def pose_similarity(t1: RigidTransform, t2: RigidTransform, model, r: float) -> float:
    """``1 - ADD / r``."""
    if not r > 0:
        raise ValueError("r must be positive")
    return 1.0 - add_distance(t1, t2, model) / r


def similarity_subset(model, limit: int = SIMILARITY_POINTS) -> np.ndarray:
    pts = np.asarray(model, dtype=np.float64).reshape(-1, 3)
    if len(pts) <= limit:
        return pts
    step = int(np.ceil(len(pts) / limit))
    return pts[::step]


def merge_corrs(parts: list) -> np.ndarray:
    """Union of correspondence rows, keeping the max weight per index pair."""
    rows = np.concatenate([p for p in parts if len(p)], axis=0) if any(len(p) for p in parts) \
        else np.zeros((0, 3))
    if len(rows) == 0:
        return rows
    order = np.lexsort((-rows[:, 2], rows[:, 1], rows[:, 0]))
    rows = rows[order]
    first = np.ones(len(rows), dtype=bool)
    first[1:] = (rows[1:, 0] != rows[:-1, 0]) | (rows[1:, 1] != rows[:-1, 1])
    return rows[first]


def refine_pose(pose: RigidTransform, src, tgt, weights, tau2: float, iters: int) -> RigidTransform:
    """Re-solve on the current inliers, keeping a new pose only if it has at
    least as many inliers as the best so far."""
    best, best_count = pose, int(np.count_nonzero(_inlier_mask(pose, src, tgt, tau2)))
    for _ in range(iters):
        inl = _inlier_mask(best, src, tgt, tau2)
        if np.count_nonzero(inl) < 3:
            break
        try:
            cand = weighted_svd(src[inl], tgt[inl], weights[inl])
        except DegenerateConfiguration:
            break
        count = int(np.count_nonzero(_inlier_mask(cand, src, tgt, tau2)))
        if count < best_count:
            break
        converged = np.allclose(cand.as_matrix(), best.as_matrix(), atol=1e-12, rtol=0)
        best, best_count = cand, count
        if converged:
            break
    return best


def nms_select(candidates: list, global_corrs: GlobalCorrespondences, cfg: SelectionConfig,
               model, dense_p, dense_q) -> list:
    """Greedy anchor-and-merge selection over pose hypotheses.

    Candidates are ranked by inlier ratio (ties by ``order_key``). Each round
    merges every surviving candidate similar to the anchor, re-solves and
    refines the pose on the merged matches and emits it. A refined pose that
    drifted onto an already emitted one is dropped. Finally outputs with
    fewer than ``tau3`` times the largest global inlier count are removed.
    """
    if not candidates:
        return []
    sub = similarity_subset(model)
    dense_p = np.asarray(dense_p, dtype=np.float64)
    dense_q = np.asarray(dense_q, dtype=np.float64)
    remaining = sorted(candidates, key=lambda h: (-h.inlier_ratio, h.order_key))
    emitted = []
    while remaining:
        anchor = remaining[0]
        group = [h for h in remaining
                 if pose_similarity(anchor.pose, h.pose, sub, cfg.diameter) >= cfg.tau_s]
        remaining = [h for h in remaining if not any(h is g for g in group)]
        corrs = merge_corrs([h.corrs for h in group])
        pose = anchor.pose
        if len(corrs) >= 3:
            src = dense_p[corrs[:, 0].astype(np.int64)]
            tgt = dense_q[corrs[:, 1].astype(np.int64)]
            w = corrs[:, 2]
            if len(group) > 1:
                try:
                    merged = weighted_svd(src, tgt, w)
                    if np.count_nonzero(_inlier_mask(merged, src, tgt, cfg.tau2)) >= \
                            np.count_nonzero(_inlier_mask(pose, src, tgt, cfg.tau2)):
                        pose = merged
                except DegenerateConfiguration:
                    pass
            pose = refine_pose(pose, src, tgt, w, cfg.tau2, cfg.refine_iters)
        if any(pose_similarity(pose, e.pose, sub, cfg.diameter) >= cfg.tau_s for e in emitted):
            continue
        emitted.append(PoseHypothesis(pose, corrs, order_key=anchor.order_key))

    if len(global_corrs) == 0:
        return emitted
    for h in emitted:
        inl = _inlier_mask(h.pose, global_corrs.src, global_corrs.tgt, cfg.tau2)
        h.inlier_count = int(np.count_nonzero(inl))
        h.inlier_ratio = h.inlier_count / len(global_corrs)
    top = max(h.inlier_count for h in emitted)
    return [h for h in emitted if h.inlier_count >= cfg.tau3 * top]
