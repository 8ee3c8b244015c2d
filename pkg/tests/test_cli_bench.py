import csv
import io
import json
import subprocess
import sys

import pytest

from multireg.harness import bench, selftest
from multireg.harness.cli import main


def small_spec(**kw):
    base = dict(n_scenes=2, min_instances=2, max_instances=3, noise=[0.0, 0.005], seed=5)
    return bench.BenchSpec(**{**base, **kw})


def test_bench_deterministic_and_shaped():
    rows_a = bench.run_bench(small_spec())
    rows_b = bench.run_bench(small_spec())
    a, b = bench.to_csv(rows_a), bench.to_csv(rows_b)
    assert bench.strip_runtime(a) == bench.strip_runtime(b)
    assert bench.to_csv(rows_a, include_runtime=False) == bench.to_csv(rows_b, include_runtime=False)
    table = list(csv.DictReader(io.StringIO(a)))
    assert list(table[0]) == bench.COLUMNS
    summary = [r for r in table if r["visibility_decile"] == "all"]
    assert len(summary) == 4 and {r["method"] for r in summary} == {"pipeline", "ransac"}
    for r in summary:
        mr, mp, mf = float(r["MR"]), float(r["MP"]), float(r["MF"])
        assert mf == pytest.approx(2 * mr * mp / (mr + mp) if mr + mp else 0.0, abs=2e-6)
    decile = [r for r in table if r["visibility_decile"] != "all"]
    assert decile and all(r["MP"] == "" and r["MR"] != "" for r in decile)


def test_bench_workers_match_serial():
    spec = small_spec(noise=[0.005], n_scenes=2)
    serial = bench.to_csv(bench.run_bench(spec), include_runtime=False)
    parallel = bench.to_csv(bench.run_bench(spec, workers=2), include_runtime=False)
    assert serial == parallel


def test_bench_spec_rejects_unknown():
    with pytest.raises(ValueError):
        bench.BenchSpec.from_dict({"n_scenes": 1, "colour": "red"})
    assert bench.scene_seed(0, 1, 2) == bench.scene_seed(0, 1, 2) != bench.scene_seed(0, 1, 3)
    assert len(small_spec().settings()) == 2


def test_cli_generate_register_eval(tmp_path, capsys):
    spec = tmp_path / "scene.json"
    spec.write_text(json.dumps({"min_instances": 3, "max_instances": 3, "seed": 2}))
    assert main(["generate", "--spec", str(spec), "--out-dir", str(tmp_path)]) == 0
    for name in ("model.ply", "scene.ply", "gt.json"):
        assert (tmp_path / name).exists()
    poses, corrs = tmp_path / "poses.json", tmp_path / "corrs.json"
    args = ["register", "--model", str(tmp_path / "model.ply"), "--scene", str(tmp_path / "scene.ply"),
            "--gt", str(tmp_path / "gt.json"), "--out", str(poses), "--corrs", str(corrs)]
    assert main(args) == 0
    out = json.loads(poses.read_text())
    assert out and all(len(p["rotation"]) == 9 and len(p["translation"]) == 3 for p in out)
    assert all("inlier_count" in p and "inlier_ratio" in p for p in out)
    per_inst = json.loads(corrs.read_text())
    assert [inst["instance"] for inst in per_inst] == list(range(len(out)))
    assert all(len(row) == 7 for inst in per_inst for row in inst["correspondences"])
    capsys.readouterr()
    assert main(["eval", "--poses", str(poses), "--gt", str(tmp_path / "gt.json"),
                 "--model", str(tmp_path / "model.ply"), "--corrs", str(corrs)]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["MF"] == pytest.approx(2 * metrics["MR"] * metrics["MP"] / (metrics["MR"] + metrics["MP"]))
    assert metrics["MR"] >= 2 / 3
    assert main(["eval", "--poses", str(poses), "--gt", str(tmp_path / "gt.json"),
                 "--model", str(tmp_path / "model.ply"), "--format", "csv", "--out", str(tmp_path / "m.csv")]) == 0
    header = (tmp_path / "m.csv").read_text().splitlines()[0].split(",")
    assert header[:4] == ["MR", "MP", "MF", "IR"]


def test_cli_register_random_weights(tmp_path):
    assert main(["generate", "--seed", "4", "--out-dir", str(tmp_path), "--ascii"]) == 0
    assert (tmp_path / "scene.ply").read_bytes().startswith(b"ply\nformat ascii")
    out = tmp_path / "p.json"
    assert main(["register", "--model", str(tmp_path / "model.ply"), "--scene", str(tmp_path / "scene.ply"),
                 "--random-weights", "--seed", "1", "--out", str(out)]) == 0
    assert isinstance(json.loads(out.read_text()), list)


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"voxel": 0.03, "bogus": 1}))
    assert main(["generate", "--out-dir", str(tmp_path)]) == 0
    rc = main(["register", "--model", str(tmp_path / "model.ply"), "--scene", str(tmp_path / "scene.ply"),
               "--config", str(bad)])
    assert rc == 2 and "bogus" in capsys.readouterr().err
    assert main(["register", "--model", str(tmp_path / "nope.ply"), "--scene", str(tmp_path / "scene.ply")]) == 2


def test_cli_bench(tmp_path):
    spec = tmp_path / "b.json"
    spec.write_text(json.dumps({"n_scenes": 1, "min_instances": 2, "max_instances": 2}))
    out = tmp_path / "b.csv"
    assert main(["bench", "--spec", str(spec), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0].split(",") == bench.COLUMNS


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "multireg", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "selftest" in proc.stdout


def test_selftest_all_pass(capsys):
    assert selftest.run(verbose=True)
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert len(lines) == len(selftest.CHECKS) and all(ln.startswith("PASS") for ln in lines)
