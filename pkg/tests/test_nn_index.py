import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hybreg.errors import InvalidArgumentError
from hybreg.geometry import Plane, PointCloud
from hybreg.nn_index import build_index
from oracles import PLANE_AXES, nn_brute

coords = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_single_point_cloud():
    idx = build_index(PointCloud([[1.0, 2.0, 3.0]]))
    for q in ([0, 0, 0], [100, -5, 2], [1, 2, 3]):
        assert idx.nearest(q)[0] == 0


def test_query_equal_to_stored_point():
    pts = np.random.default_rng(1).normal(size=(30, 3))
    idx = build_index(PointCloud(pts))
    assert idx.nearest(pts[7]) == (7, 0.0)


def test_hand_examples():
    idx = build_index(PointCloud([[0.0, 0, 0], [2.0, 0, 0]]))
    i, d = idx.nearest([0.9, 0, 0])
    assert i == 0 and abs(d - 0.81) < 1e-15
    assert idx.nearest([1.0, 0, 0]) == (0, 1.0)


def test_projected_hand_examples():
    idx = build_index(PointCloud([[0.0, 0, 5]]))
    assert idx.nearest_projected([0, 0, 9], Plane.XY) == (0, 0.0)
    assert idx.nearest_projected([0, 0, 9], Plane.YZ) == (0, 16.0)
    idx = build_index(PointCloud([[1.0, 0, 0], [0.0, 3, 0]]))
    assert idx.nearest_projected([1, 0, 9], Plane.XY) == (0, 0.0)


def test_duplicates_give_exact_distance_and_smallest_index():
    pts = np.array([[1.0, 1, 1]] * 5 + [[0.0, 0, 0]] * 20)
    idx = build_index(PointCloud(pts))
    i, d = idx.nearest([0.9, 1, 1])
    assert i == 0 and abs(d - 0.01) < 1e-15
    i, d = idx.nearest([0.0, 0, 0.1])
    assert i == 5


def test_matches_brute_force_2048():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(2048, 3))
    idx = build_index(PointCloud(pts))
    for q in rng.normal(size=(100, 3)):
        assert idx.nearest(q) == nn_brute(pts, q)


def test_oracle_equivalence_1000_queries():
    rng = np.random.default_rng(3)
    for n in (1, 5, 64, 512):
        # grid-snapped values make exact ties common
        pts = np.round(rng.normal(size=(n, 3)), 1)
        idx = build_index(PointCloud(pts))
        qs = np.round(rng.normal(size=(1000 if n == 512 else 200, 3)), 1)
        bi, bd = idx.query(qs)
        for j, q in enumerate(qs):
            assert (bi[j], bd[j]) == nn_brute(pts, q)
        for plane in Plane:
            pi, pd = idx.query(qs, plane)
            for j, q in enumerate(qs[:100]):
                assert (pi[j], pd[j]) == nn_brute(pts, q, PLANE_AXES[plane.value])


@given(arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=coords),
       arrays(np.float64, (3,), elements=coords))
def test_property_exact(pts, q):
    idx = build_index(PointCloud(pts))
    assert idx.nearest(q) == nn_brute(pts, q)
    for plane in Plane:
        assert idx.nearest_projected(q, plane) == nn_brute(pts, q, PLANE_AXES[plane.value])


def test_projected_xy_equals_3d_on_flat_cloud():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(200, 3))
    pts[:, 2] = 0.0
    idx = build_index(PointCloud(pts))
    for q in rng.normal(size=(100, 3)):
        flat = q.copy()
        flat[2] = 0.0
        assert idx.nearest_projected(q, Plane.XY) == idx.nearest(flat)


def test_invalid_inputs():
    with pytest.raises(InvalidArgumentError):
        build_index(np.zeros((0, 3)))
    idx = build_index(PointCloud([[0.0, 0, 0]]))
    with pytest.raises(InvalidArgumentError):
        idx.nearest([np.nan, 0, 0])
    with pytest.raises(InvalidArgumentError):
        idx.query(np.array([[0, 0, np.inf]]))


def test_build_is_deterministic():
    pts = np.random.default_rng(5).normal(size=(300, 3))
    a, b = build_index(PointCloud(pts)), build_index(PointCloud(pts))
    for x, y in zip(a.tree, b.tree):
        np.testing.assert_array_equal(x, y)
