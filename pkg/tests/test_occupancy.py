import numpy as np
import pytest

from eomap.geometry import CriticalRegion
from eomap.occupancy import (EarliestOccupancyMap, earliest_from_grids, earliest_occupancy,
                             occupancy_at, unseen_mask)
from eomap.scene import GeneratorConfig, Horizon, synth_generate, unseen_agent_ids

from conftest import make_scene, track

ROAD = np.array([[-10.1, -100.0], [10.1, -100.0], [10.1, 100.0], [-10.1, 100.0]])


def test_grid_basics(desk, horizon):
    sc = make_scene(drivable=(ROAD,))
    E = earliest_occupancy(sc, desk, horizon).data
    X, _ = desk.pixel_centers()
    off = np.abs(X) > 10
    assert (E[off] == 0).all()
    assert (E[~off] == horizon.T).all()
    for dt in (0, 7, 29):
        occ = occupancy_at(sc, desk, dt, horizon).data
        assert np.array_equal(occ.astype(bool), off)


def test_arrival_at_step_4(desk, horizon):
    # moving up the road at 5 m/s (0.5 m per step) from 10 m behind the probe pixel
    v = track("v", "vehicle", lambda s: (0.25, 0.25 + 0.5 * (s - horizon.t - 4) - 2.25 + 1e-6,
                                         np.pi / 2), range(0, 51))
    sc = make_scene(v, drivable=(ROAD,))
    row, col = desk.to_pixel(0.25, 0.25)
    seq = [occupancy_at(sc, desk, dt, horizon).data[row, col] for dt in range(8)]
    assert seq == [0, 0, 0, 0, 1, 1, 1, 1]
    assert earliest_occupancy(sc, desk, horizon).data[row, col] == 4


def test_eom_type_validation():
    with pytest.raises(ValueError):
        EarliestOccupancyMap(np.array([[31]]), 30)


def test_earliest_from_grids():
    g = np.zeros((5, 2, 2), np.uint8)
    g[3, 0, 0] = 1
    g[1, 0, 0] = 1
    g[4, 1, 1] = 1
    assert earliest_from_grids(g, 5).tolist() == [[1, 5], [5, 4]]


def test_oracle_on_generated_scenes(small):
    horizon = Horizon()
    for sc in synth_generate(GeneratorConfig(n_scenes=12, region=small), 5):
        grids = [occupancy_at(sc, small, dt, horizon).data for dt in range(horizon.T)]
        assert np.array_equal(earliest_occupancy(sc, small, horizon).data,
                              earliest_from_grids(grids, horizon.T))


def test_unseen_mask(desk, horizon):
    plain = make_scene(track("in", "vehicle", lambda s: (0.0, 20.0, 0.0), range(0, 51)))
    assert not unseen_mask(plain, desk, horizon).data.any()
    E = earliest_occupancy(plain, desk, horizon).data
    assert (E < horizon.T).any()  # occupied, but seen

    x0 = desk.extent_m()[1] + 2.25 + 4.0
    v = track("v", "vehicle", lambda s: (x0 - (s - horizon.t), 10.25, np.pi), range(0, 51))
    sc = make_scene(v)
    assert unseen_agent_ids(sc, desk, horizon) == {"v"}
    M = unseen_mask(sc, desk, horizon).data
    # oracle: union of footprints over dt in 1..T
    X, Y = desk.pixel_centers()
    want = np.zeros(desk.shape, bool)
    for dt in range(1, horizon.T + 1):
        p = v.poses[horizon.t + dt]
        want |= (np.abs(X - p.x) <= 2.25) & (np.abs(Y - p.y) <= 1.0)
    assert np.array_equal(M.astype(bool), want)
    assert want.any()
