"""End-to-end registration of one model against one scene."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from ..attention import InstanceMask, WeightSet, run_transformer
from ..embedding import geometric_structure_embedding
from ..errors import DegenerateConfiguration, TooFewCorrespondences
from ..geometry import model_diameter
from ..matching import candidate_pose, expand_candidate, match_candidate, superpoint_match
from ..preprocess import PointCloud, build_graph
from ..selection import GlobalCorrespondences, PoseHypothesis, global_inlier_ratio, merge_corrs, nms_select
from .config import Config
from .features import FeatureSet, oracle_features, random_features
from .metrics import MetricsReport, evaluate, gt_comembership, inlier_ratio_metric, mask_miou
from .ransac import sequential_ransac

FeatureSource = Union[FeatureSet, Callable, None]


@dataclass
class RegistrationReport:
    registrations: list
    corrs: np.ndarray          # (m, 3) global (p_idx, q_idx, weight)
    src: np.ndarray            # model coordinates of the global matches
    tgt: np.ndarray            # scene coordinates of the global matches
    mask: InstanceMask
    n_candidates: int
    metrics: Optional[MetricsReport] = None
    runtime: float = 0.0
    timings: dict = field(default_factory=dict)
    # voxelised clouds that the correspondence indices refer to
    dense_p: np.ndarray = field(default=None, repr=False)
    dense_q: np.ndarray = field(default=None, repr=False)

    @property
    def poses(self) -> list:
        return [h.pose for h in self.registrations]


def _resolve_features(features: FeatureSource, graph_p, graph_q, cfg: Config, gt) -> FeatureSet:
    if isinstance(features, FeatureSet):
        return features
    if callable(features):
        return features(graph_p, graph_q)
    if gt is not None and graph_q.dense_labels is not None:
        return oracle_features(graph_p, graph_q, gt.poses, cfg.inlier_rate, cfg.feature_dim, cfg.seed)
    return random_features(graph_p, graph_q, cfg.feature_dim, cfg.seed)


def run_pipeline(model: PointCloud, scene: PointCloud, cfg: Config = Config(),
                 features: FeatureSource = None, weights: Optional[WeightSet] = None,
                 gt=None) -> RegistrationReport:
    """Preprocess, transformer, candidate generation, NMS and (with ``gt``) evaluation.

    Without explicit ``weights`` the pass-through weight set is used, so the
    superpoint features reach matching unchanged up to scale. With
    ``cfg.mask_source == "ground_truth"`` candidate expansion uses the
    co-membership mask derived from scene labels instead of the predicted one.
    """
    t0 = time.perf_counter()
    timings = {}

    def lap(name, since):
        now = time.perf_counter()
        timings[name] = timings.get(name, 0.0) + now - since
        return now

    graph_p = build_graph(model, cfg.voxel, cfg.stages, cfg.k, cfg.geodesic_k)
    graph_q = build_graph(scene, cfg.voxel, cfg.stages, cfg.k, cfg.geodesic_k)
    fs = _resolve_features(features, graph_p, graph_q, cfg, gt)
    t = lap("preprocess", t0)

    if weights is None:
        weights = WeightSet.passthrough(fs.sp_p.shape[1], cfg.d, cfg.heads, cfg.n_iters, d_t=cfg.d_t)
    emb_cfg = cfg.embedding()
    struct_p = geometric_structure_embedding(graph_p.superpoints, graph_p.knn, emb_cfg)
    struct_q = geometric_structure_embedding(graph_q.superpoints, graph_q.knn, emb_cfg)
    out = run_transformer(fs.sp_p, fs.sp_q, graph_p.knn, graph_q.knn, struct_p, struct_q,
                          graph_q.geodesic, weights, emb_cfg, cfg.tau)
    t = lap("transformer", t)

    mask = out.mask_q
    gt_mask = None
    if graph_q.superpoint_labels is not None:
        gt_mask = gt_comembership(graph_q.knn, graph_q.superpoint_labels)
    if cfg.mask_source == "ground_truth":
        if gt_mask is None:
            raise ValueError("ground-truth masks need a labelled scene")
        mask = InstanceMask(gt_mask, gt_mask.astype(np.float64))

    seeds = superpoint_match(out.z_p, out.z_q, cfg.n_c)
    cands = []
    for corr in seeds:
        cand = expand_candidate(corr, graph_p, graph_q, mask, cfg.cap)
        match_candidate(cand, fs.dense_p, fs.dense_q, iters=cfg.sinkhorn_iters, mutual_k=cfg.mutual_k,
                        dustbin=cfg.dustbin, temperature=cfg.temperature)
        try:
            candidate_pose(cand, graph_p.dense, graph_q.dense)
        except (TooFewCorrespondences, DegenerateConfiguration):
            continue
        cands.append(cand)
    t = lap("candidates", t)

    corrs = merge_corrs([c.point_corrs for c in cands])
    src = graph_p.dense[corrs[:, 0].astype(np.int64)] if len(corrs) else np.zeros((0, 3))
    tgt = graph_q.dense[corrs[:, 1].astype(np.int64)] if len(corrs) else np.zeros((0, 3))
    glob = GlobalCorrespondences(src, tgt)
    hyps = [
        PoseHypothesis(c.pose, c.point_corrs, global_inlier_ratio(c.pose, glob, cfg.tau2),
                       order_key=(c.seed.p_index, c.seed.q_index))
        for c in cands
    ]
    diameter = gt.diameter if gt is not None else model_diameter(graph_p.dense)
    regs = nms_select(hyps, glob, cfg.selection(diameter), graph_p.dense, graph_p.dense, graph_q.dense)
    t = lap("selection", t)

    report = RegistrationReport(regs, corrs, src, tgt, mask, len(cands), timings=timings,
                                dense_p=graph_p.dense, dense_q=graph_q.dense)
    if gt is not None:
        m = evaluate(report.poses, gt.poses, graph_p.dense, cfg.thresholds(), gt.symmetric, gt.diameter)
        m.ir = inlier_ratio_metric(src, tgt, gt.poses, cfg.tau1) if len(src) else 0.0
        if gt_mask is not None:
            m.miou = mask_miou(out.mask_q.allowed, gt_mask)
        report.metrics = m
        lap("evaluate", t)
    report.runtime = time.perf_counter() - t0
    if report.metrics is not None:
        report.metrics.runtime = report.runtime
    return report


def run_baseline(report: RegistrationReport, cfg: Config, model_dense, gt=None,
                 max_models: Optional[int] = None) -> tuple:
    """Sequential RANSAC on the pipeline's own global correspondence set."""
    t0 = time.perf_counter()
    cap = max_models if max_models is not None else 16
    poses = sequential_ransac(report.src, report.tgt, cfg.tau2, cap, cfg.ransac_iters, cfg.seed) \
        if len(report.src) >= 3 else []
    metrics = None
    if gt is not None:
        metrics = evaluate(poses, gt.poses, model_dense, cfg.thresholds(), gt.symmetric, gt.diameter)
        metrics.ir = report.metrics.ir if report.metrics is not None else float("nan")
    runtime = time.perf_counter() - t0
    if metrics is not None:
        metrics.runtime = runtime
    return poses, metrics
