import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hybreg import io
from hybreg.cli import pair_ids, run
from hybreg.datagen import PairSpec, sample_shape
from hybreg.geometry import RigidTransform

TINY = ["--n-directions", "4", "--n-angles", "4", "--max-iters", "30", "--refine-iters", "10"]
DATA = ["--n-pairs", "3", "--n-points", "256", "--min-overlap", "0.3"]


def _files(path):
    return sorted(p.relative_to(path) for p in path.rglob("*"))


@pytest.mark.parametrize("argv", [
    ["register", "--out", "{d}/p.json"],
    ["register", "--manifest", "m.json", "--source", "a.xyz", "--out", "{d}/p.json"],
    ["benchmark", "--out", "{d}/b", "--alpha", "0"],
    ["benchmark", "--out", "{d}/b", "--prune", "15-64"],
    ["benchmark", "--out", "{d}/b", "--n-directions", "0"],
    ["generate", "--out", "{d}/g", "--min-overlap", "1.5"],
    ["ablate", "--out", "{d}/a", "--configs", "full,bogus"],
    ["benchmark", "--out", "{d}/b", "--no-such-flag"],
    ["evaluate", "--manifest", "m.json"],
])
def test_usage_errors_exit_2_and_write_nothing(tmp_path, capsys, argv):
    code = run([a.format(d=tmp_path) for a in argv])
    assert code == 2
    assert _files(tmp_path) == []
    err = capsys.readouterr().err.strip().splitlines()
    assert err and err[-1].startswith("hybreg: error:") or "usage" in " ".join(err)


def test_missing_manifest_file_exits_nonzero(tmp_path):
    assert run(["register", "--manifest", str(tmp_path / "none.json"), "--out",
                str(tmp_path / "p.json")]) != 0
    assert not (tmp_path / "p.json").exists()


def test_help_exits_zero():
    r = subprocess.run([sys.executable, "-m", "hybreg", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "benchmark" in r.stdout


def test_pair_ids():
    assert pair_ids(3) == ["pair0000", "pair0001", "pair0002"]
    assert pair_ids(12345)[-1] == "pair12344"


def test_register_self_manifest(tmp_path):
    cloud = sample_shape(PairSpec(n_points=300, seed=8))
    io.write_cloud(cloud, tmp_path / "c.ply")
    ident = RigidTransform.identity()
    pairs = tuple(io.ManifestPair(f"p{k}", "c.ply", "c.ply", ident, "restricted", 1.0) for k in range(2))
    io.write_manifest(io.PairManifest(pairs, np.zeros(3), 1.0), tmp_path / "m.json")
    assert run(["register", "--manifest", str(tmp_path / "m.json"), "--out",
                str(tmp_path / "pred.json")]) == 0
    assert run(["evaluate", "--manifest", str(tmp_path / "m.json"), "--predictions",
                str(tmp_path / "pred.json"), "--out", str(tmp_path / "rep.json")]) == 0
    rep = io.read_report(tmp_path / "rep.json")
    assert rep.summary["mean"]["rot_error_deg"] < 0.1
    assert len(rep.pairs) == 2


def test_register_single_pair_raw_frame(tmp_path):
    from hybreg.geometry import apply_transform, rodrigues
    from hybreg.metrics import rotation_error, translation_error

    cloud = sample_shape(PairSpec(n_points=300, seed=9))
    src = io.PointCloud(cloud.points * 25.0 + 100.0)
    R, c = rodrigues([0, 0, 1], 0.3), src.centroid()
    # rotate about the centroid so the offset stays inside the translation bound
    gt = RigidTransform(R, c - R @ c + [2.0, -1.0, 0.5])
    io.write_cloud(src, tmp_path / "s.xyz")
    io.write_cloud(apply_transform(src, gt), tmp_path / "t.xyz")
    assert run(["register", "--source", str(tmp_path / "s.xyz"), "--target", str(tmp_path / "t.xyz"),
                "--out", str(tmp_path / "p.json")]) == 0
    (pred, _), = io.read_predictions(tmp_path / "p.json").values()
    assert rotation_error(gt.R, pred.R) < 0.5
    assert translation_error(gt.T, pred.T) < 0.5


def test_generate_then_register_then_evaluate(tmp_path):
    out = tmp_path / "data"
    assert run(["generate", "--out", str(out), *DATA, "--format", "ply", "--seed", "2"]) == 0
    m = io.read_manifest(out / "manifest.json")
    assert len(m.pairs) == 3
    assert run(["register", "--manifest", str(out / "manifest.json"), "--out", str(tmp_path / "p.json"),
                *TINY]) == 0
    assert run(["evaluate", "--manifest", str(out / "manifest.json"), "--predictions",
                str(tmp_path / "p.json"), "--out", str(tmp_path / "r.json")]) == 0
    with open(tmp_path / "r.csv") as f:
        assert len(list(csv.reader(f))) == 4


def test_benchmark_deterministic_across_threads(tmp_path):
    outs = []
    for threads in ("1", "2"):
        out = tmp_path / f"t{threads}"
        assert run(["benchmark", "--out", str(out), *DATA, *TINY, "--seed", "4", "--no-timing",
                    "--threads", threads]) == 0
        outs.append(out)
    for name in ("report.json", "report.csv", "predictions.json", "manifest.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    doc = json.loads((outs[0] / "report.json").read_text())
    assert all(p["wall_time"] == 0.0 for p in doc["pairs"])


def test_ablate_smoke(tmp_path):
    out = tmp_path / "abl"
    assert run(["ablate", "--out", str(out), *DATA, *TINY, "--configs", "full,no-projected,euler",
                "--no-timing"]) == 0
    rows = json.loads((out / "ablation.json").read_text())["rows"]
    assert [r["config"] for r in rows] == ["full", "no-projected", "euler"]
    assert all(r["count"] == 3 for r in rows)
    with open(out / "ablation.csv") as f:
        assert len(list(csv.reader(f))) == 4
