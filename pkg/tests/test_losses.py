import numpy as np
import pytest
from scipy.special import expit

from eomap.losses import (LossWeights, hard_exact, hard_smooth, rec_loss, soft_loss, total_loss,
                          unseen_exact, unseen_loss)
from eomap.tensor import Tensor


def test_rec_loss():
    E = np.arange(12.0).reshape(3, 4)
    assert float(rec_loss(E, E).data) == 0
    assert float(rec_loss(E + 1, E).data) == 12
    rng = np.random.default_rng(0)
    P, Q = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    assert float(rec_loss(P, Q).data) == pytest.approx(sum((P.ravel() - Q.ravel()) ** 2))


def test_hard_exact():
    E = np.full((10, 10), 5.0)
    assert hard_exact(E, E) == 0
    assert hard_exact(E + 0.5, E) == 100
    P = E.copy()
    P[0, 0] += 1
    P[3, 3] += 0.01
    P[9, 2] += 4
    P[5, 5] -= 2
    assert hard_exact(P, E) == 3


def test_hard_smooth_values():
    E = np.zeros((4, 4))
    assert float(hard_smooth(E, E, per_pixel=True).data) == pytest.approx(0.5, abs=1e-12)
    assert float(hard_smooth([[0.1]], [[0.0]]).data) == pytest.approx(0.9999546, abs=1e-6)
    assert float(hard_smooth([[-0.1]], [[0.0]]).data) == pytest.approx(4.54e-5, abs=1e-7)


def test_soft_loss():
    assert float(soft_loss(np.zeros((3, 3))).data) == 0
    assert float(soft_loss(np.full((3, 5), 30.0)).data) == -30 * 15
    P = Tensor(np.random.default_rng(1).uniform(0, 30, (4, 4)), requires_grad=True)
    soft_loss(P).backward()
    assert np.array_equal(P.grad, -np.ones((4, 4)))


def test_unseen_loss():
    rng = np.random.default_rng(2)
    E = rng.integers(0, 30, (6, 6)).astype(float)
    P = E + rng.choice([-1.0, 1.0], (6, 6))
    assert float(unseen_loss(P, E, np.zeros((6, 6))).data) == 0
    assert float(unseen_loss(P, E, np.ones((6, 6))).data) == pytest.approx(
        float(hard_smooth(P, E).data))
    late = np.argwhere(P > E)
    M = np.zeros((6, 6))
    for r, c in late[::2]:
        M[r, c] = 1
    s = lambda x: 1 / (1 + np.exp(-100 * x))
    want = sum(s(P[r, c] - E[r, c]) for r, c in late[::2])
    assert float(unseen_loss(P, E, M).data) == pytest.approx(want)
    assert unseen_exact(P, E, M) == len(late[::2])


def test_total_loss_composition():
    E = np.full((3, 4), 7.0)
    t = total_loss(E, E, np.zeros((3, 4)))
    assert t.hard == pytest.approx(0.5 * 1000 * 12)
    assert float(t.total.data) == pytest.approx(0.5 * 1000 * 12 - E.sum())
    rng = np.random.default_rng(3)
    w = LossWeights()
    for _ in range(20):
        E = rng.integers(0, 31, (5, 5)).astype(float)
        P = rng.uniform(0, 30, (5, 5))
        M = rng.integers(0, 2, (5, 5))
        s = expit(100 * (P - E))
        want = ((P - E) ** 2).sum() + 1000 * s.sum() - P.sum() + 1000 * (s * M).sum()
        assert float(total_loss(P, E, M, w).total.data) == pytest.approx(want, abs=1e-9, rel=0)


def test_ablation_flags_zero_terms():
    rng = np.random.default_rng(4)
    P, E, M = rng.uniform(0, 30, (4, 4)), rng.integers(0, 31, (4, 4)), np.ones((4, 4))
    t = total_loss(P, E, M, no_hard=True, no_soft=True, no_unseen=True)
    assert (t.hard, t.soft, t.unseen) == (0.0, 0.0, 0.0)
    assert float(t.total.data) == pytest.approx(t.rec)


def test_batch_reduction_is_mean_of_scene_sums():
    rng = np.random.default_rng(5)
    P, E = rng.normal(size=(3, 1, 4, 4)), rng.normal(size=(3, 1, 4, 4))
    want = np.mean([((P[i] - E[i]) ** 2).sum() for i in range(3)])
    assert float(rec_loss(P, E).data) == pytest.approx(want)
    with pytest.raises(ValueError):
        rec_loss(P, E[:2])
