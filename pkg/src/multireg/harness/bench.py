"""Benchmark sweeps over noise, occlusion and feature inlier rate.

Every setting runs the same number of generated scenes through the pipeline
and through sequential RANSAC on the pipeline's correspondences. Rows are
written per method and setting, once over all instances (``visibility_decile``
``all``) and once per decile of per-instance visible fraction, where only
recall is defined.
"""
from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .metrics import MetricsReport, aggregate
from .pipeline import run_baseline, run_pipeline
from .scene import SceneSpec, generate_scene

COLUMNS = ["method", "noise", "occlusion", "inlier_rate", "visibility_decile", "n_scenes",
           "n_instances", "MR", "MP", "MF", "IR", "runtime_s"]
METHODS = ("pipeline", "ransac")


@dataclass
class BenchSpec:
    noise: list = field(default_factory=lambda: [0.005])
    occlusion: list = field(default_factory=lambda: [0.3])
    inlier_rate: list = field(default_factory=lambda: [0.5])
    n_scenes: int = 10
    min_instances: int = 4
    max_instances: int = 16
    model: str = "bracket"
    seed: int = 0
    mask_source: str = "ground_truth"

    def settings(self):
        return list(itertools.product(self.noise, self.occlusion, self.inlier_rate))

    @classmethod
    def from_dict(cls, data: dict) -> "BenchSpec":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown bench keys: {', '.join(unknown)}")
        return cls(**data)


@dataclass
class SceneResult:
    visible: np.ndarray
    reports: dict      # method -> MetricsReport


def scene_seed(base: int, setting: int, index: int) -> int:
    return int(np.random.SeedSequence([base, setting, index]).generate_state(1)[0])


def run_scene(args) -> SceneResult:
    spec, cfg, seed = args
    model, scene, gt = generate_scene(SceneSpec(
        model=spec["model"], min_instances=spec["min_instances"], max_instances=spec["max_instances"],
        noise_sigma=spec["noise"], occlusion=spec["occlusion"], tau2=cfg.tau2, seed=seed,
    ))
    cfg = cfg.replace(seed=seed)
    rep = run_pipeline(model, scene, cfg, gt=gt)
    _, base = run_baseline(rep, cfg, model.points, gt, max_models=spec["max_instances"])
    return SceneResult(gt.visible, {"pipeline": rep.metrics, "ransac": base})


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "" if not np.isfinite(x) else f"{x:.6f}"


def _rows_for(method: str, setting: tuple, results: list) -> list:
    noise, occ, rate = setting
    reps: list = [r.reports[method] for r in results]
    agg: MetricsReport = aggregate(reps)
    head = [method, f"{noise:.6f}", f"{occ:.6f}", f"{rate:.6f}"]
    rows = [head + ["all", len(reps), agg.n_gt, agg.mr, agg.mp, agg.mf, agg.ir, agg.runtime]]
    vis = np.concatenate([r.visible for r in results]) if results else np.zeros(0)
    ok = np.concatenate([r.reports[method].success for r in results]) if results else np.zeros(0, bool)
    deciles = np.minimum((vis * 10).astype(int), 9)
    for d in range(10):
        sel = deciles == d
        if not sel.any():
            continue
        rows.append(head + [str(d), len(reps), int(sel.sum()), float(ok[sel].mean()),
                            float("nan"), float("nan"), float("nan"), float("nan")])
    return rows


def run_bench(spec: BenchSpec, cfg: Config = Config(), workers: int = 1) -> list:
    cfg = cfg.replace(mask_source=spec.mask_source)
    rows = []
    for si, setting in enumerate(spec.settings()):
        noise, occ, rate = setting
        scene_cfg = {"model": spec.model, "min_instances": spec.min_instances,
                     "max_instances": spec.max_instances, "noise": noise, "occlusion": occ}
        rate_cfg = cfg.replace(inlier_rate=float(rate))
        jobs = [(scene_cfg, rate_cfg, scene_seed(spec.seed, si, i)) for i in range(spec.n_scenes)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run_scene, jobs))     # map keeps scene order
        else:
            results = [run_scene(j) for j in jobs]
        for method in METHODS:
            rows.extend(_rows_for(method, setting, results))
    return rows


def to_csv(rows: list, include_runtime: bool = True) -> str:
    buf = io.StringIO()
    cols = COLUMNS if include_runtime else COLUMNS[:-1]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        cells = [_fmt(v) for v in row]
        w.writerow(cells if include_runtime else cells[:-1])
    return buf.getvalue()


def strip_runtime(text: str) -> str:
    """CSV text without the runtime column, for determinism comparisons."""
    out = []
    for line in csv.reader(io.StringIO(text)):
        out.append(",".join(line[:-1]))
    return "\n".join(out)
