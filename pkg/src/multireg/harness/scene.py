"""Synthetic multi-instance scenes with known poses.

Instances are independent surface resamplings of a model, placed in a
bin-shaped region with rejection-sampled poses, cut by a random plane,
jittered with Gaussian noise and mixed with uniform background clutter.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ..errors import ModelLoadFailure
from ..geometry import RigidTransform, add_distance, apply_transform, model_diameter
from ..preprocess import BACKGROUND, PointCloud

# box lists (min corner, max corner) before normalisation to unit diameter
_PRIMITIVES = {
    # L-bracket with an off-centre tab: no rotational symmetry
    "bracket": [((0.0, 0.0, 0.0), (1.0, 0.35, 0.1)),
                ((0.0, 0.0, 0.1), (0.1, 0.35, 0.65)),
                ((0.55, 0.35, 0.0), (0.8, 0.55, 0.1))],
    "box": [((0.0, 0.0, 0.0), (1.0, 0.6, 0.3))],
    "tee": [((0.0, 0.0, 0.0), (1.0, 0.2, 0.2)),
            ((0.4, 0.2, 0.0), (0.6, 0.8, 0.2))],
}
SYMMETRIC = {"box", "cylinder"}


@dataclass
class SceneSpec:
    model: str = "bracket"
    model_points: int = 1000
    diameter: float = 1.0
    min_instances: int = 4
    max_instances: int = 16
    noise_sigma: float = 0.005
    occlusion: float = 0.3
    background_ratio: float = 0.2
    background_points: Optional[int] = None
    tau2: float = 0.05
    min_add_frac: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.min_instances <= self.max_instances:
            raise ValueError("need 1 <= min_instances <= max_instances")
        if not 0.0 <= self.occlusion < 1.0:
            raise ValueError("occlusion must lie in [0, 1)")
        if self.noise_sigma < 0 or self.background_ratio < 0:
            raise ValueError("noise and background must be non-negative")


@dataclass
class GroundTruth:
    poses: list
    labels: np.ndarray
    visible: np.ndarray
    diameter: float
    symmetric: bool = False
    clean_points: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_instances(self) -> int:
        return len(self.poses)


def _sample_boxes(boxes, n: int, rng: np.random.Generator) -> np.ndarray:
    faces = []
    for lo, hi in boxes:
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        ext = hi - lo
        for axis in range(3):
            a, b = [i for i in range(3) if i != axis]
            for side in (lo[axis], hi[axis]):
                faces.append((axis, a, b, side, lo, ext, ext[a] * ext[b]))
    area = np.array([f[-1] for f in faces])
    which = rng.choice(len(faces), size=n, p=area / area.sum())
    pts = np.empty((n, 3))
    uv = rng.random((n, 2))
    for fi, (axis, a, b, side, lo, ext, _) in enumerate(faces):
        sel = which == fi
        pts[sel, axis] = side
        pts[sel, a] = lo[a] + uv[sel, 0] * ext[a]
        pts[sel, b] = lo[b] + uv[sel, 1] * ext[b]
    return pts


def _sample_cylinder(n: int, rng: np.random.Generator) -> np.ndarray:
    r, h = 0.3, 0.8
    side, cap = 2 * np.pi * r * h, np.pi * r * r
    which = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, n)
    rad = np.where(which == 0, r, r * np.sqrt(rng.random(n)))
    z = np.where(which == 0, rng.uniform(0, h, n), np.where(which == 1, 0.0, h))
    return np.column_stack([rad * np.cos(theta), rad * np.sin(theta), z])


def sample_primitive(name: str, n: int, rng: np.random.Generator, diameter: float = 1.0) -> np.ndarray:
    """``n`` surface samples of a named primitive, centred, scaled to ``diameter``."""
    if name == "cylinder":
        pts = _sample_cylinder(n, rng)
        raw_diam = np.hypot(0.6, 0.8)
    elif name in _PRIMITIVES:
        boxes = _PRIMITIVES[name]
        pts = _sample_boxes(boxes, n, rng)
        corners = np.array([c for box in boxes for c in box])
        raw_diam = np.linalg.norm(corners.max(0) - corners.min(0))
    else:
        raise ModelLoadFailure(f"unknown primitive {name!r}")
    centre = 0.5 * (pts.min(0) + pts.max(0))
    return (pts - centre) * (diameter / raw_diam)


def load_model(spec: SceneSpec, rng: np.random.Generator):
    """Model points plus a sampler producing fresh surface draws."""
    if spec.model in _PRIMITIVES or spec.model == "cylinder":
        pts = sample_primitive(spec.model, spec.model_points, rng, spec.diameter)

        def resample(r):
            return sample_primitive(spec.model, spec.model_points, r, spec.diameter)

        return pts, resample, spec.model in SYMMETRIC
    from .io import read_ply

    try:
        cloud = read_ply(spec.model)
    except (OSError, ValueError) as exc:
        raise ModelLoadFailure(f"cannot load model {spec.model!r}: {exc}") from exc
    pts = cloud.points
    if len(pts) < 3:
        raise ModelLoadFailure("model has fewer than 3 points")
    pts = pts - pts.mean(0)

    def resample(r):
        return pts.copy()

    return pts, resample, False


def _place(rng: np.random.Generator, n_inst: int, model: np.ndarray, diam: float,
           min_add: float, max_tries: int = 5000) -> list:
    side = 1.2 * diam * np.sqrt(n_inst)
    probe = model[:: max(1, len(model) // 256)]
    poses = []
    tries = 0
    while len(poses) < n_inst:
        tries += 1
        if tries > max_tries:
            # region too crowded for the separation rule; widen it
            side *= 1.25
            tries = 0
        t = np.array([rng.uniform(-side / 2, side / 2), rng.uniform(-side / 2, side / 2),
                      rng.uniform(0.0, 0.5 * diam)])
        cand = RigidTransform.random(rng, 0.0)
        cand = RigidTransform(cand.rotation, t)
        ok = all(
            add_distance(cand, p, probe) >= min_add
            and np.linalg.norm(cand.translation - p.translation) >= min_add
            for p in poses
        )
        if ok:
            poses.append(cand)
    return poses


def plane_cut(points: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Indices kept after removing ``round(fraction * n)`` points beyond a random plane."""
    n = len(points)
    drop = int(round(fraction * n))
    if drop == 0:
        return np.arange(n)
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    order = np.argsort(-(points @ u), kind="stable")
    return np.sort(order[drop:])


def generate_scene(spec: SceneSpec):
    """Return ``(model, scene, gt)``; identical specs give identical outputs."""
    rng = np.random.default_rng(spec.seed)
    model_pts, resample, symmetric = load_model(spec, rng)
    diam = model_diameter(model_pts)
    n_inst = int(rng.integers(spec.min_instances, spec.max_instances + 1))
    poses = _place(rng, n_inst, model_pts, diam, spec.min_add_frac * diam)

    chunks, labels, clean, visible = [], [], [], []
    for k, pose in enumerate(poses, start=1):
        local = resample(rng)
        placed = apply_transform(pose, local)
        keep = plane_cut(placed, spec.occlusion, rng)
        placed = placed[keep]
        visible.append(len(keep) / len(local))
        clean.append(placed)
        noisy = placed + rng.normal(scale=spec.noise_sigma, size=placed.shape) if spec.noise_sigma > 0 else placed
        chunks.append(noisy)
        labels.append(np.full(len(placed), k, dtype=np.int64))

    inst = np.concatenate(chunks)
    clean_all = np.concatenate(clean)
    n_bg = spec.background_points
    if n_bg is None:
        n_bg = int(round(spec.background_ratio * len(inst)))
    bg = _background(rng, clean_all, n_bg, spec.tau2)
    scene_pts = np.concatenate([inst, bg])
    scene_labels = np.concatenate(labels + [np.full(len(bg), BACKGROUND, dtype=np.int64)])
    gt = GroundTruth(
        poses=poses,
        labels=scene_labels,
        visible=np.array(visible),
        diameter=float(diam),
        symmetric=symmetric,
        clean_points=np.concatenate([clean_all, bg]),
    )
    return PointCloud(model_pts), PointCloud(scene_pts, scene_labels), gt


def _background(rng, surface: np.ndarray, n: int, tau2: float) -> np.ndarray:
    if n <= 0:
        return np.zeros((0, 3))
    lo, hi = surface.min(0), surface.max(0)
    tree = cKDTree(surface)
    out = []
    have = 0
    while have < n:
        batch = rng.uniform(lo, hi, size=(max(2 * (n - have), 64), 3))
        d, _ = tree.query(batch, k=1)
        batch = batch[d >= tau2]
        out.append(batch)
        have += len(batch)
    return np.concatenate(out)[:n]
