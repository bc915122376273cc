import json

import numpy as np
import pytest

from eomap import tensor as tn
from eomap.geometry import CriticalRegion
from eomap.net import NetConfig
from eomap.trainer import (DatasetSpec, RunConfig, build_split, evaluate, load_net, train)

REGION = CriticalRegion(-16, 15, -8, 23, 0.5)  # 32 x 32


@pytest.fixture(scope="module")
def data():
    spec = DatasetSpec(n_train=4, n_val=6, seed=1, region=REGION)
    return spec, build_split(spec, "train"), build_split(spec, "val")


def _cfg(spec, **kw):
    kw.setdefault("batch_size", 2)
    return RunConfig(dataset=spec, net=NetConfig(base_channels=2), **kw)


def test_overfit_single_scene(data):
    spec, tr, _ = data
    cfg = _cfg(spec, epochs=200, lr=1e-2, batch_size=1)
    res = train(cfg, tr[:1])
    totals = np.array([r["total"] for r in res.log])
    smooth = np.convolve(totals, np.ones(20) / 20, mode="valid")
    assert smooth[-1] < smooth[0]
    window = totals.reshape(-1, 40).mean(axis=1)
    assert np.all(np.diff(window) < 0)


def test_determinism_and_run_dir(data, tmp_path):
    spec, tr, va = data
    cfg = _cfg(spec, epochs=2)
    a = train(cfg, tr, run_dir=tmp_path / "a")
    b = train(cfg, tr, run_dir=tmp_path / "b")
    for k in ("config.json", "log.csv", "checkpoints/epoch_1"):
        assert (tmp_path / "a" / k).read_bytes() == (tmp_path / "b" / k).read_bytes()
    header = (tmp_path / "a" / "log.csv").read_text().splitlines()[0]
    assert header == "epoch,step,L_rec,L_h,L_s,L_u,total"
    assert RunConfig.from_dict(json.loads((tmp_path / "a" / "config.json").read_text())) == cfg
    net = load_net(tmp_path / "a", tmp_path / "a" / "checkpoints" / "epoch_1")
    r1 = evaluate(net, va, REGION, spec.horizon, run_dir=tmp_path / "a")
    r2 = evaluate(a.net, va, REGION, spec.horizon)
    assert r1.to_json() == r2.to_json()
    assert (tmp_path / "a" / "report.csv").exists()


def test_no_hard_logs_zero(data):
    spec, tr, _ = data
    res = train(_cfg(spec, epochs=1, no_hard=True), tr)
    assert all(r["L_h"] == 0.0 for r in res.log)


def test_non_finite_loss_aborts(data, tmp_path):
    spec, tr, _ = data
    bad = [tr[0]]
    bad[0] = type(tr[0])(**{**tr[0].__dict__, "E": np.full_like(tr[0].E, 0) * np.nan})
    with pytest.raises(RuntimeError, match="non-finite"):
        train(_cfg(spec, epochs=1), bad, run_dir=tmp_path)
    assert list(tmp_path.glob("nonfinite_step*.npz"))


def test_reference_predictors(data):
    spec, _, va = data
    h = spec.horizon
    oracle = evaluate("oracle", va, REGION, h)
    assert oracle.MR == 0 and oracle.MSE == 0
    zeros = evaluate("zeros", va, REGION, h)
    assert zeros.MR == 0 and zeros.aggressiveness == 31
    allT = evaluate("all_T", va, REGION, h)
    frac = np.mean([(s.E < h.T).mean() for s in va])
    assert allT.MR == pytest.approx(100 * frac)
    cv = evaluate("cv", va, REGION, h)
    assert np.isfinite(cv.MR)
    assert cv.n_unseen_scenes == sum(s.has_unseen for s in va)


def test_geometry_mismatch_rejected(data):
    spec, _, va = data
    with pytest.raises(ValueError):
        evaluate(lambda s: np.zeros((3, 3)), va, REGION, spec.horizon)
    res = train(_cfg(spec, epochs=1), data[1])
    with pytest.raises(ValueError):
        evaluate(res.net, va, CriticalRegion(-8, 7, -8, 7, 0.5), spec.horizon)


def test_run_config_validation():
    with pytest.raises(ValueError):
        DatasetSpec(n_train=0)
