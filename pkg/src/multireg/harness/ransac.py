"""Sequential RANSAC: the multi-model fitting baseline.

Fit one pose with 3-point RANSAC, strip its inliers, repeat.
"""
from __future__ import annotations

import numpy as np

from ..errors import DegenerateConfiguration
from ..geometry import RigidTransform, weighted_svd

_CHUNK = 128
# hypotheses are ranked on at most this many correspondences
SCORE_SUBSET = 1024


def batched_kabsch(src: np.ndarray, tgt: np.ndarray):
    """Unit-weight Kabsch on a batch ``(B, m, 3)``; returns ``(R, t, ok)``."""
    cs = src.mean(axis=1, keepdims=True)
    ct = tgt.mean(axis=1, keepdims=True)
    h = np.einsum("bmi,bmj->bij", src - cs, tgt - ct)
    u, s, vt = np.linalg.svd(h)
    v = np.transpose(vt, (0, 2, 1))
    d = np.sign(np.linalg.det(v @ np.transpose(u, (0, 2, 1))))
    d[d == 0] = 1.0
    fix = np.ones((len(src), 3))
    fix[:, 2] = d
    rot = (v * fix[:, None, :]) @ np.transpose(u, (0, 2, 1))
    trans = ct[:, 0, :] - np.einsum("bij,bj->bi", rot, cs[:, 0, :])
    ok = s[:, 1] > 1e-9 * np.maximum(s[:, 0], 1e-300)
    return rot, trans, ok


def _count_inliers(rot, trans, src, tgt, tau2):
    moved = np.matmul(rot, src.T) + trans[:, :, None]          # (B, 3, n)
    d2 = np.sum((moved - tgt.T) ** 2, axis=1)
    return np.count_nonzero(d2 < tau2 * tau2, axis=1)


def _triplets(rng: np.random.Generator, n: int, b: int) -> np.ndarray:
    tri = rng.integers(0, n, size=(b, 3))
    distinct = (tri[:, 0] != tri[:, 1]) & (tri[:, 0] != tri[:, 2]) & (tri[:, 1] != tri[:, 2])
    return tri[distinct]


def sequential_ransac(src, tgt, tau2: float, max_models: int = 16, iters_per_model: int = 1000,
                      seed: int = 0) -> list:
    """Poses explaining disjoint inlier subsets of the correspondences.

    Each round draws ``iters_per_model`` minimal samples, keeps the hypothesis
    with the most ``tau2``-inliers, refits it on those inliers and removes
    them. Stops when the best hypothesis has fewer than 3 inliers. With many
    correspondences, hypotheses are ranked on a fixed random subset of
    ``SCORE_SUBSET`` of them and only the winner is scored on all.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    tgt = np.asarray(tgt, dtype=np.float64).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    active = np.arange(len(src))
    poses = []
    while len(poses) < max_models and len(active) >= 3:
        s, t = src[active], tgt[active]
        if len(s) > SCORE_SUBSET:
            probe = np.sort(rng.choice(len(s), size=SCORE_SUBSET, replace=False))
        else:
            probe = np.arange(len(s))
        best_count, best = -1, None
        for start in range(0, iters_per_model, _CHUNK):
            tri = _triplets(rng, len(s), min(_CHUNK, iters_per_model - start))
            if len(tri) == 0:
                continue
            rot, trans, ok = batched_kabsch(s[tri], t[tri])
            if not ok.any():
                continue
            rot, trans = rot[ok], trans[ok]
            counts = _count_inliers(rot, trans, s[probe], t[probe], tau2)
            i = int(np.argmax(counts))
            if counts[i] > best_count:
                best_count, best = int(counts[i]), RigidTransform(rot[i], trans[i])
        if best is None:
            break
        inl = np.linalg.norm(s @ best.rotation.T + best.translation - t, axis=1) < tau2
        if np.count_nonzero(inl) < 3:
            break
        try:
            refit = weighted_svd(s[inl], t[inl])
            refit_inl = np.linalg.norm(s @ refit.rotation.T + refit.translation - t, axis=1) < tau2
            if np.count_nonzero(refit_inl) >= np.count_nonzero(inl):
                best, inl = refit, refit_inl
        except DegenerateConfiguration:
            pass
        poses.append(best)
        active = active[~inl]
    return poses
