import zlib

import numpy as np
import pytest

from eomap import tensor as tn
from eomap.tensor import Tensor

from grad_cases import CASES
from gradcheck import max_rel_error


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradients_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(3):
        f, arrays = CASES[name](rng)
        assert max_rel_error(f, arrays) < 1e-4


def test_scalar_examples():
    x = Tensor(3.0, requires_grad=True)
    (x ** 2).backward()
    assert x.grad == pytest.approx(6.0)
    z = Tensor(0.0, requires_grad=True)
    tn.sigmoid(z).backward()
    assert z.grad == pytest.approx(0.25)


def test_backward_needs_scalar_and_accumulates():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2).backward()
    y = x * x + x  # x used twice
    y.sum().backward()
    assert np.allclose(x.grad, 3.0)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with tn.no_grad():
        y = (x * 3).sum()
    assert not y.requires_grad


def _naive_conv(x, w, d, pad):
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = H + 2 * pad - d * (k - 1), W + 2 * pad - d * (k - 1)
    out = np.zeros((B, O, Ho, Wo))
    for b in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    for c in range(C):
                        for u in range(k):
                            for v in range(k):
                                out[b, o, i, j] += xp[b, c, i + d * u, j + d * v] * w[o, c, u, v]
    return out


def test_conv_examples():
    x = np.random.default_rng(0).normal(size=(1, 1, 5, 5))
    ident = np.zeros((1, 1, 3, 3))
    ident[0, 0, 1, 1] = 1
    assert np.array_equal(tn.conv2d(Tensor(x), Tensor(ident), padding=1).data, x)
    ones = tn.conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 3, 3)))).data
    assert ones.shape == (1, 1, 3, 3) and ones[0, 0, 1, 1] == 9
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=(1, 1, 8, 8)), rng.normal(size=(1, 1, 3, 3))
    got = tn.conv2d(Tensor(x), Tensor(w), dilation=2).data
    assert np.abs(got - _naive_conv(x, w, 2, 0)).max() < 1e-12
    got = tn.conv2d(Tensor(x), Tensor(w), dilation=2, padding=2).data
    assert np.abs(got - _naive_conv(x, w, 2, 2)).max() < 1e-12


def test_conv_matches_torch():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(2)
    x, w, b = rng.normal(size=(2, 3, 10, 10)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    for d in (1, 2, 4):
        want = torch.nn.functional.conv2d(torch.tensor(x), torch.tensor(w), torch.tensor(b),
                                          padding=d, dilation=d).numpy()
        assert np.allclose(tn.conv2d(Tensor(x), Tensor(w), Tensor(b), dilation=d,
                                     padding=d).data, want, atol=1e-12)


def test_spatial_softmax_examples():
    s = tn.spatial_softmax(Tensor(np.full((1, 1, 3, 4), 2.5))).data
    assert np.allclose(s, 1 / 12)
    s = tn.spatial_softmax(Tensor(np.array([[[[0.0, np.log(3)]]]]))).data
    assert np.allclose(s.ravel(), [0.25, 0.75])
    r = np.random.default_rng(3).normal(size=(2, 1, 3, 3))
    assert np.allclose(tn.spatial_softmax(Tensor(r)).data, tn.spatial_softmax(Tensor(r + 7)).data)


def test_adam():
    p = {"a": np.array([1.0, -2.0, 3.0])}
    g = {"a": np.array([0.5, -3.0, 1e-3])}
    st = tn.adam_init(p)
    before = p["a"].copy()
    tn.adam_step(p, g, st, lr=1e-3)
    assert np.allclose(before - p["a"], 1e-3 * np.sign(g["a"]), rtol=1e-4)
    q = {"b": np.array([4.0])}
    st = tn.adam_init(q)
    for _ in range(50):
        tn.adam_step(q, {"b": np.zeros(1)}, st)
    assert q["b"][0] == 4.0
    x = {"u": np.ones(3), "v": np.ones(3)}
    st = tn.adam_init(x)
    tn.adam_step(x, {"u": np.full(3, 0.2), "v": np.full(3, 0.2)}, st)
    assert np.array_equal(x["u"], x["v"])


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    named = {"w": rng.normal(size=(2, 3)).astype(np.float32), "b": rng.normal(size=4),
             "n": np.arange(3, dtype=np.int64)}
    path = tmp_path / "c.ckpt"
    tn.save_checkpoint(path, named)
    back = tn.load_checkpoint(path)
    for k in named:
        assert back[k].dtype == named[k].dtype
        assert back[k].tobytes() == named[k].tobytes()
    buf = tn.checkpoint_bytes(named)
    with pytest.raises(ValueError, match="bad magic"):
        tn.checkpoint_from_bytes(b"XXXX" + buf[4:])
    with pytest.raises(ValueError, match="truncated"):
        tn.checkpoint_from_bytes(buf[:-3])
