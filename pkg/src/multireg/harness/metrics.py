"""Registration metrics: MR, MP, MF, inlier ratio and mask mIoU."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyCorrespondences, ShapeMismatch
from ..geometry import add_distance, add_s_distance, apply_transform, rre_rte
from ..selection import similarity_subset


@dataclass(frozen=True)
class Thresholds:
    rre_deg: float = 15.0
    rte: float = 0.1
    adds_frac: float = 0.1

    def __post_init__(self):
        if min(self.rre_deg, self.rte, self.adds_frac) <= 0:
            raise ValueError("thresholds must be positive")


@dataclass
class MetricsReport:
    mr: float
    mp: float
    mf: float
    ir: float = float("nan")
    miou: float = float("nan")
    n_gt: int = 0
    n_pred: int = 0
    n_success: int = 0
    # per ground-truth instance; nan where no prediction was assigned
    rre: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rte: np.ndarray = field(default_factory=lambda: np.zeros(0))
    add_s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    success: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    runtime: float = 0.0


def f1_score(mr: float, mp: float) -> float:
    """Harmonic mean of recall and precision, 0 when both vanish."""
    return 2.0 * mr * mp / (mr + mp) if mr + mp > 0 else 0.0


def assign_greedy(pred_poses: list, gt_poses: list, model, symmetric: bool = False) -> list:
    """One-to-one ``(pred, gt)`` pairs taken in ascending ADD order (ties by index)."""
    if not pred_poses or not gt_poses:
        return []
    sub = similarity_subset(model)
    dist = add_s_distance if symmetric else add_distance
    cost = np.array([[dist(p, g, sub) for g in gt_poses] for p in pred_poses])
    flat = np.argsort(cost.reshape(-1), kind="stable")
    used_p, used_g, pairs = set(), set(), []
    n_g = len(gt_poses)
    for f in flat:
        i, j = divmod(int(f), n_g)
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j))
    return pairs


def evaluate(pred_poses: list, gt_poses: list, model, thresholds: Thresholds = Thresholds(),
             symmetric: bool = False, diameter: float = 1.0) -> MetricsReport:
    n_gt, n_pred = len(gt_poses), len(pred_poses)
    rre = np.full(n_gt, np.nan)
    rte = np.full(n_gt, np.nan)
    adds = np.full(n_gt, np.nan)
    ok = np.zeros(n_gt, dtype=bool)
    for i, j in assign_greedy(pred_poses, gt_poses, model, symmetric):
        rre[j], rte[j] = rre_rte(pred_poses[i], gt_poses[j])
        adds[j] = add_s_distance(pred_poses[i], gt_poses[j], similarity_subset(model))
        if symmetric:
            ok[j] = adds[j] <= thresholds.adds_frac * diameter
        else:
            ok[j] = rre[j] <= thresholds.rre_deg and rte[j] <= thresholds.rte
    n_ok = int(ok.sum())
    mr = n_ok / n_gt if n_gt else 0.0
    mp = n_ok / n_pred if n_pred else 0.0
    return MetricsReport(mr, mp, f1_score(mr, mp), n_gt=n_gt, n_pred=n_pred, n_success=n_ok,
                         rre=rre, rte=rte, add_s=adds, success=ok)


def inlier_ratio_metric(src, tgt, gt_poses: list, tau1: float) -> float:
    """Fraction of pairs that some ground-truth pose maps within ``tau1``."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    tgt = np.asarray(tgt, dtype=np.float64).reshape(-1, 3)
    if len(src) == 0:
        raise EmptyCorrespondences("inlier ratio of an empty correspondence set")
    best = np.full(len(src), np.inf)
    for pose in gt_poses:
        best = np.minimum(best, np.linalg.norm(apply_transform(pose, src) - tgt, axis=1))
    return float(np.mean(best < tau1))


def mask_miou(pred_allowed, gt_allowed) -> float:
    """Mean over anchors of the IoU of allowed neighbour slots."""
    p = np.asarray(pred_allowed, dtype=bool)
    g = np.asarray(gt_allowed, dtype=bool)
    if p.shape != g.shape:
        raise ShapeMismatch(f"mask shapes differ: {p.shape} vs {g.shape}")
    inter = np.count_nonzero(p & g, axis=1)
    union = np.count_nonzero(p | g, axis=1)
    iou = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    return float(iou.mean()) if len(iou) else 1.0


def gt_comembership(knn: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Ground-truth mask: neighbour shares the anchor's instance; self always allowed."""
    lab = np.asarray(labels)
    allowed = (lab[knn] == lab[:, None]) & (lab[:, None] >= 1)
    allowed[:, 0] = True
    return allowed


def aggregate(reports: list) -> MetricsReport:
    """Scene-averaged recall/precision; MF is their harmonic mean."""
    if not reports:
        return MetricsReport(0.0, 0.0, 0.0)
    mr = float(np.mean([r.mr for r in reports]))
    mp = float(np.mean([r.mp for r in reports]))
    irs = [r.ir for r in reports if np.isfinite(r.ir)]
    mious = [r.miou for r in reports if np.isfinite(r.miou)]
    return MetricsReport(
        mr, mp, f1_score(mr, mp),
        ir=float(np.mean(irs)) if irs else float("nan"),
        miou=float(np.mean(mious)) if mious else float("nan"),
        n_gt=sum(r.n_gt for r in reports),
        n_pred=sum(r.n_pred for r in reports),
        n_success=sum(r.n_success for r in reports),
        runtime=float(sum(r.runtime for r in reports)),
    )
