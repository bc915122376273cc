import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import Point, Polygon, box as sbox

from eomap.geometry import (CriticalRegion, box_corners, box_intersects_rect, box_mask_full,
                            box_pixels, boxes_intersect_rect, points_in_polygon, to_ego_frame,
                            wrap_angle)


def test_region_shapes():
    assert CriticalRegion.desk().shape == (100, 100)
    assert CriticalRegion.full_scale().shape == (501, 501)
    with pytest.raises(ValueError):
        CriticalRegion(5, 5, 0, 10, 0.1)
    with pytest.raises(ValueError):
        CriticalRegion(0, 5, 0, 10, 0.0)


def test_ego_pixel_and_scale():
    r = CriticalRegion.full_scale()
    row0, col0 = r.to_pixel(0.0, 0.0)
    assert (row0, col0) == (r.k, -r.l)
    # 1 m ahead at 0.1 m/px is 10 rows up
    assert r.to_pixel(0.0, 1.0) == (row0 - 10, col0)


def test_to_ego_frame_rotation():
    # ego facing world +x: a point 2 m to world +y is 2 m to the ego's left
    x, y = to_ego_frame(2.0, 2.0, 0.0, 0.0, 0.0)
    assert np.allclose([x, y], [-2.0, 2.0])


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_wrap_angle_range(a, b):
    w = wrap_angle(a - b)
    assert -np.pi <= w < np.pi + 1e-12
    assert np.isclose(np.cos(w), np.cos(a - b))


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 20), st.floats(-10, 40), st.floats(-np.pi, np.pi),
       st.floats(0.3, 8), st.floats(0.3, 4))
def test_box_pixels_matches_full_scan_and_shapely(cx, cy, heading, L, W):
    r = CriticalRegion.desk()
    rr, cc = box_pixels(r, cx, cy, heading, L, W)
    full = box_mask_full(r, cx, cy, heading, L, W)
    win = np.zeros(r.shape, bool)
    win[rr, cc] = True
    assert np.array_equal(win, full)
    poly = Polygon(box_corners(cx, cy, heading, L, W))
    X, Y = r.pixel_centers()
    for i, j in zip(*np.nonzero(full)):
        assert poly.buffer(1e-6).contains(Point(X[i, j], Y[i, j]))


def test_points_in_polygon_vs_shapely():
    rng = np.random.default_rng(0)
    poly = np.array([[0, 0], [4, 0], [4, 1], [1, 1], [1, 4], [0, 4]], dtype=float)
    P = Polygon(poly)
    pts = rng.uniform(-1, 5, size=(2000, 2))
    got = points_in_polygon(pts[:, 0], pts[:, 1], poly)
    want = np.array([P.contains(Point(p)) for p in pts])
    assert np.array_equal(got, want)


def test_vectorized_rect_test_matches_shapely():
    rng = np.random.default_rng(1)
    n = 3000
    cx, cy = rng.uniform(-40, 40, n), rng.uniform(-30, 60, n)
    hd = rng.uniform(-np.pi, np.pi, n)
    rect = (-25.0, 24.75, -10.25, 39.75)
    got = boxes_intersect_rect(cx, cy, hd, 4.5, 2.0, *rect)
    R = sbox(rect[0], rect[2], rect[1], rect[3])
    want = np.array([Polygon(box_corners(a, b, h, 4.5, 2.0)).intersects(R)
                     for a, b, h in zip(cx, cy, hd)])
    assert np.array_equal(got, want)
    scalar = np.array([box_intersects_rect(box_corners(a, b, h, 4.5, 2.0), *rect)
                       for a, b, h in zip(cx[:300], cy[:300], hd[:300])])
    assert np.array_equal(scalar, want[:300])
