"""Rigid transforms, the weighted Procrustes solver and pose distances.

Points are always ``(N, 3)`` float arrays; a transform maps a point ``p`` to
``R @ p + t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import DegenerateConfiguration, EmptyModel

_RANK_TOL = 1e-12


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        m = np.asarray(matrix, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def random(cls, rng: np.random.Generator, translation_scale: float = 1.0) -> "RigidTransform":
        rot = Rotation.random(random_state=rng).as_matrix()
        return cls(rot, rng.uniform(-translation_scale, translation_scale, size=3))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return bool(
            np.all(np.isfinite(r))
            and np.all(np.isfinite(self.translation))
            and np.allclose(r.T @ r, np.eye(3), atol=tol)
            and abs(np.linalg.det(r) - 1.0) <= tol
        )


def apply_transform(transform: RigidTransform, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return pts @ transform.rotation.T + transform.translation


def weighted_svd(source, target, weights=None) -> RigidTransform:
    """Weighted least-squares rigid fit mapping ``source`` onto ``target``.

    Minimises ``sum_i w_i * ||R s_i + t - q_i||^2`` with the weighted-centroid
    Kabsch construction and a determinant sign fix.

    Raises:
        DegenerateConfiguration: fewer than 3 positive-weight pairs, or the
            weighted cross-covariance has rank < 2 (e.g. collinear sources).
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    tgt = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if src.shape != tgt.shape:
        raise DegenerateConfiguration(f"shape mismatch {src.shape} vs {tgt.shape}")
    if weights is None:
        w = np.ones(len(src))
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if len(w) != len(src):
            raise DegenerateConfiguration("weights length does not match correspondences")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DegenerateConfiguration("weights must be finite and non-negative")
    keep = w > 0
    if np.count_nonzero(keep) < 3:
        raise DegenerateConfiguration("need at least 3 positive-weight correspondences")
    src, tgt, w = src[keep], tgt[keep], w[keep]
    w = w / w.sum()

    src_c = w @ src
    tgt_c = w @ tgt
    h = (src - src_c).T @ ((tgt - tgt_c) * w[:, None])
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0 or s[1] <= _RANK_TOL * s[0]:
        raise DegenerateConfiguration("weighted cross-covariance has rank < 2")
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    rot = v @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, tgt_c - rot @ src_c)


def add_distance(t1: RigidTransform, t2: RigidTransform, model) -> float:
    """Mean distance between the model placed by ``t1`` and by ``t2`` (ADD)."""
    pts = np.asarray(model, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyModel("ADD needs a non-empty model")
    diff = apply_transform(t1, pts) - apply_transform(t2, pts)
    return float(np.linalg.norm(diff, axis=1).mean())


def add_s_distance(t1: RigidTransform, t2: RigidTransform, model) -> float:
    """Nearest-point variant of ADD for symmetric objects (ADD-S)."""
    pts = np.asarray(model, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyModel("ADD-S needs a non-empty model")
    a = apply_transform(t1, pts)
    b = apply_transform(t2, pts)
    dist, _ = cKDTree(b).query(a, k=1)
    return float(np.mean(dist))


def rotation_angle(r1, r2) -> float:
    """Geodesic angle in radians between two rotation matrices."""
    cos = (np.trace(np.asarray(r2).T @ np.asarray(r1)) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def rre_rte(pred: RigidTransform, gt: RigidTransform) -> tuple[float, float]:
    """Relative rotation error in degrees and relative translation error."""
    rre = np.degrees(rotation_angle(pred.rotation, gt.rotation))
    rte = float(np.linalg.norm(pred.translation - gt.translation))
    return float(rre), rte


def axis_angle_rotation(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * angle_rad).as_matrix()


def model_diameter(points) -> float:
    """Largest pairwise distance, computed on the convex hull when possible."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        return 0.0
    try:
        from scipy.spatial import ConvexHull

        pts = pts[ConvexHull(pts).vertices]
    except Exception:
        pass
    best = 0.0
    for start in range(0, len(pts), 512):
        block = pts[start:start + 512]
        d = np.linalg.norm(block[:, None, :] - pts[None, :, :], axis=2)
        best = max(best, float(d.max()))
    return best
