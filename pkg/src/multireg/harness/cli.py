"""Command line entry point: generate, register, eval, bench, selftest."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..attention import WeightSet
from ..errors import MultiRegError
from .bench import BenchSpec, run_bench, to_csv
from .config import Config, load_config, preset
from .io import (pose_to_json, read_ground_truth, read_ply, read_poses, load_weights, write_ground_truth,
                 write_ply, write_poses)
from .metrics import evaluate, inlier_ratio_metric
from .pipeline import run_pipeline
from .scene import SceneSpec, generate_scene

METRIC_COLUMNS = ["MR", "MP", "MF", "IR", "mIoU", "n_gt", "n_pred", "n_success", "runtime_s"]


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MultiRegError(f"cannot read {path}: {exc}") from exc


def _config(args) -> Config:
    return load_config(args.config) if args.config else preset(args.preset)


def cmd_generate(args):
    data = _read_json(args.spec) if args.spec else {}
    if args.seed is not None:
        data["seed"] = args.seed
    known = set(SceneSpec.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    if unknown:
        raise MultiRegError(f"unknown scene keys: {', '.join(unknown)}")
    model, scene, gt = generate_scene(SceneSpec(**data))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ply(out / "model.ply", model, binary=not args.ascii)
    write_ply(out / "scene.ply", scene, binary=not args.ascii)
    write_ground_truth(out / "gt.json", gt)
    print(f"{gt.n_instances} instances, {len(scene)} scene points -> {out}")


def cmd_register(args):
    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    model, scene = read_ply(args.model), read_ply(args.scene)
    gt = None
    if args.gt:
        gt = read_ground_truth(args.gt)
        if scene.labels is None:
            raise MultiRegError("oracle features need the scene's instance labels")
    if args.random_weights:
        weights = WeightSet.random(cfg.feature_dim, cfg.d, cfg.heads, cfg.n_iters, cfg.d_t, seed=cfg.seed)
    elif args.weights:
        weights = load_weights(args.weights)
    else:
        weights = None
    rep = run_pipeline(model, scene, cfg, weights=weights, gt=gt)
    write_poses(args.out, rep.registrations)
    if args.corrs:
        items = []
        for i, h in enumerate(rep.registrations):
            c = np.asarray(h.corrs)
            pi, qi = c[:, 0].astype(np.int64), c[:, 1].astype(np.int64)
            rows = np.column_stack([rep.dense_p[pi], rep.dense_q[qi], c[:, 2]])
            items.append({"instance": i, "correspondences": rows.tolist()})
        Path(args.corrs).write_text(json.dumps(items))
    msg = f"{len(rep.registrations)} instances in {rep.runtime:.2f}s -> {args.out}"
    if rep.metrics is not None:
        m = rep.metrics
        msg += f" (MR {m.mr:.3f}, MP {m.mp:.3f}, MF {m.mf:.3f})"
    print(msg)


def _metrics_row(m) -> dict:
    return {"MR": m.mr, "MP": m.mp, "MF": m.mf, "IR": m.ir, "mIoU": m.miou, "n_gt": m.n_gt,
            "n_pred": m.n_pred, "n_success": m.n_success, "runtime_s": m.runtime}


def cmd_eval(args):
    cfg = _config(args)
    poses = read_poses(args.poses)
    gt = read_ground_truth(args.gt)
    model = read_ply(args.model).points
    m = evaluate(poses, gt.poses, model, cfg.thresholds(), gt.symmetric, gt.diameter)
    if args.corrs:
        rows = np.array([r for item in _read_json(args.corrs) for r in item["correspondences"]])
        if len(rows):
            m.ir = inlier_ratio_metric(rows[:, :3], rows[:, 3:6], gt.poses, cfg.tau1)
    row = _metrics_row(m)
    if args.format == "csv":
        cells = ["" if isinstance(v, float) and not np.isfinite(v) else
                 (str(v) if isinstance(v, int) else f"{v:.6f}") for v in row.values()]
        text = ",".join(METRIC_COLUMNS) + "\n" + ",".join(cells) + "\n"
    else:
        clean = {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in row.items()}
        clean["instances"] = [
            {"rre_deg": None if not np.isfinite(a) else float(a),
             "rte": None if not np.isfinite(b) else float(b),
             "add_s": None if not np.isfinite(c) else float(c), "success": bool(s)}
            for a, b, c, s in zip(m.rre, m.rte, m.add_s, m.success)]
        text = json.dumps(clean, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_bench(args):
    cfg = _config(args)
    spec = BenchSpec.from_dict(_read_json(args.spec)) if args.spec else BenchSpec()
    if args.scenes is not None:
        spec.n_scenes = args.scenes
    if args.seed is not None:
        spec.seed = args.seed
    text = to_csv(run_bench(spec, cfg, workers=args.workers))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_selftest(args):
    from . import selftest

    return 0 if selftest.run() else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multireg", description="Multi-instance point cloud registration.")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON config (optional \"preset\" key picks the base)")
        p.add_argument("--preset", default="synthetic", help="base preset when no --config is given")

    p = sub.add_parser("generate", help="write a synthetic scene as PLY plus ground truth JSON")
    p.add_argument("--spec", help="scene JSON with SceneSpec fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--ascii", action="store_true", help="ASCII PLY instead of binary")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("register", help="register a model against a scene")
    p.add_argument("--model", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--gt", help="ground truth JSON; enables oracle features and metrics")
    w = p.add_mutually_exclusive_group()
    w.add_argument("--weights", help="weights manifest JSON")
    w.add_argument("--random-weights", action="store_true", help="seeded random initialisation")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="poses.json")
    p.add_argument("--corrs", help="write per-instance correspondences JSON here")
    with_config(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="score poses against ground truth")
    p.add_argument("--poses", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--model", required=True, help="model PLY, for ADD-S")
    p.add_argument("--corrs", help="correspondences JSON from register, for IR")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    with_config(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="sweep noise, occlusion and inlier rate")
    p.add_argument("--spec", help="bench JSON with BenchSpec fields")
    p.add_argument("--scenes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    with_config(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selftest", help="run the built-in oracle checks")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (MultiRegError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
