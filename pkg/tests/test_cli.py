import json
import os
import shutil

import numpy as np
import pytest

from eomap import io as eio
from eomap.cli import main

GEO = ["--desk", "--bounds-px", "-16", "15", "-8", "23"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    sc, gt, cv = str(d / "sc"), str(d / "gt"), str(d / "cv")
    assert main(["gen-scenes", "--n", "10", "--seed", "7", "--out", sc, *GEO]) == 0
    assert main(["gt", "--scenes", sc, "--out", gt, *GEO]) == 0
    assert main(["baseline", "--scenes", sc, "--out", cv, "--model", "cv", *GEO]) == 0
    return d, sc, gt, cv


def test_gen_scenes_writes_files(pipeline):
    _, sc, _, _ = pipeline
    assert len([n for n in os.listdir(sc) if n.endswith(".json") and n != "meta.json"]) == 10


def test_gen_scenes_is_reproducible(pipeline, tmp_path):
    _, sc, _, _ = pipeline
    assert main(["gen-scenes", "--n", "10", "--seed", "7", "--out", str(tmp_path), *GEO]) == 0
    for n in os.listdir(sc):
        assert (tmp_path / n).read_bytes() == open(os.path.join(sc, n), "rb").read()


def test_eval_smoke(pipeline, capsys):
    d, _, gt, cv = pipeline
    assert main(["--json", "eval", "--gt-dir", gt, "--pred-dir", cv, "--out", str(d / "rep")]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows[0]["name"] == "cv" and np.isfinite(rows[0]["MR"])
    assert rows[1]["name"] == "oracle" and rows[1]["MR"] == 0
    assert (d / "rep" / "report.csv").exists()


def test_eval_mismatch_exit_2(pipeline, tmp_path, capsys):
    _, _, gt, cv = pipeline
    bad = tmp_path / "bad"
    shutil.copytree(cv, bad)
    first = sorted(n for n in os.listdir(bad) if n.endswith(".P.eomg"))[0]
    os.rename(bad / first, bad / ("zzz.P.eomg"))
    assert main(["eval", "--gt-dir", gt, "--pred-dir", str(bad)]) == 2
    err = capsys.readouterr().err
    assert first[:-len(".P.eomg")] in err


def test_eval_geometry_mismatch(pipeline, tmp_path):
    _, sc, gt, _ = pipeline
    other = str(tmp_path / "o")
    assert main(["baseline", "--scenes", sc, "--out", other, "--model", "cv", "--desk"]) == 0
    assert main(["eval", "--gt-dir", gt, "--pred-dir", other]) == 2


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["nope"]) == 1
    assert main(["gen-scenes", "--n", "0", "--out", "x"]) == 1
    assert main(["filter", "--eom", "a", "--trajs", "b", "--margin", "-1"]) == 1
    assert main(["--help"]) == 0
    assert main(["eval", "--help"]) == 0


def test_filter_and_viz(pipeline, tmp_path, capsys):
    _, _, gt, _ = pipeline
    P = np.full((10, 10), 30.0, np.float32)
    P[5, 5] = 2
    eio.write_grid(P, tmp_path / "p.eomg")
    trajs = [{"name": "free", "steps": [1, 2], "footprints": [[[0, 0]], [[0, 1]]]},
             {"name": "hit", "steps": [3], "footprints": [[[5, 5], [5, 6]]]}]
    (tmp_path / "t.json").write_text(json.dumps(trajs))
    assert main(["--json", "filter", "--eom", str(tmp_path / "p.eomg"),
                 "--trajs", str(tmp_path / "t.json")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["safe"] == ["free"] and out["unsafe"][0] == {"name": "hit", "step": 3,
                                                            "cell": [5, 5]}
    late = [{"name": "late", "steps": [30], "footprints": [[[0, 0]]]}]
    (tmp_path / "late.json").write_text(json.dumps(late))
    assert main(["--json", "filter", "--eom", str(tmp_path / "p.eomg"),
                 "--trajs", str(tmp_path / "late.json")]) == 0
    assert json.loads(capsys.readouterr().out)["safe"] == ["late"]  # 30 is the free sentinel
    assert main(["--json", "filter", "--eom", str(tmp_path / "p.eomg"), "--horizon-steps", "40",
                 "--trajs", str(tmp_path / "late.json")]) == 0
    assert json.loads(capsys.readouterr().out)["safe"] == []
    assert main(["filter", "--eom", str(tmp_path / "missing"), "--trajs",
                 str(tmp_path / "t.json")]) == 2
    E = sorted(n for n in os.listdir(gt) if n.endswith(".E.eomg"))[0]
    assert main(["viz", "--grid", os.path.join(gt, E), "--out", str(tmp_path / "e.pgm")]) == 0
    assert eio.read_pnm(tmp_path / "e.pgm").shape == (32, 32)


def test_rasterize(pipeline, tmp_path):
    _, sc, _, _ = pipeline
    assert main(["rasterize", "--scenes", sc, "--out", str(tmp_path), "--ppm", *GEO]) == 0
    assert len(list(tmp_path.glob("*.vehicle.eomg"))) == 10
    assert len(list(tmp_path.glob("*.ppm"))) == 10


def test_train_and_eval_checkpoint(pipeline, tmp_path, capsys):
    _, sc, gt, _ = pipeline
    run = str(tmp_path / "run")
    assert main(["train", "--run-dir", run, "--n-train", "4", "--n-val", "2", "--epochs", "1",
                 "--base-channels", "2", *GEO]) == 0
    ckpt = os.path.join(run, "checkpoints", "epoch_0")
    assert main(["--json", "eval", "--gt-dir", gt, "--checkpoint", ckpt, "--run-dir", run,
                 "--scenes", sc]) == 0
    rows = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert rows[0]["n_scenes"] == 10
