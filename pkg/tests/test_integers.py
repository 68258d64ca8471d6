import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fermizones.integers import (height, integer_normal, is_primitive, nearest_primitive_direction,
                                 primitive, primitive_vectors, sign_normalize)

ivec = st.lists(st.integers(-30, 30), min_size=3, max_size=3).filter(any)


def test_primitive_and_sign():
    assert primitive([4, -6, 2]).tolist() == [2, -3, 1]
    assert sign_normalize(np.array([0, -2, 1])).tolist() == [0, 2, -1]
    assert primitive([0, 0, 0]).tolist() == [0, 0, 0]
    assert height([3, -7, 2]) == 7


@given(ivec, st.integers(1, 9))
def test_primitive_divides_out_scale(v, k):
    p = primitive(np.array(v) * k)
    assert is_primitive(p)
    assert np.array_equal(sign_normalize(p), sign_normalize(primitive(v)))


def test_primitive_vectors_counts():
    # height 1 in 3-D: 26 nonzero vectors of the unit cube, 13 up to sign
    pv = primitive_vectors(3, 1)
    assert len(pv) == 13
    assert all(is_primitive(v) and v[np.flatnonzero(v)[0]] > 0 for v in pv)
    heights = [height(v) for v in primitive_vectors(3, 4)]
    assert heights == sorted(heights)


@given(ivec)
def test_nearest_direction_recovers_integer_vector(v):
    v = np.array(v)
    got = nearest_primitive_direction(v / np.linalg.norm(v), 30, 1e-9)
    assert np.array_equal(got, sign_normalize(primitive(v)))


def test_integer_normal_of_plane():
    # directions spanning the plane orthogonal to (1, 2, 3)
    a = np.array([2.0, -1.0, 0.0])
    b = np.cross([1, 2, 3], a)
    n, res, best = integer_normal([a / np.linalg.norm(a), b / np.linalg.norm(b)])
    assert n.tolist() == [1, 2, 3] and res < 1e-12 and best is None


def test_integer_normal_reports_best_when_out_of_range():
    a = np.array([40.0, -1.0, 0.0])
    b = np.cross([1, 40, 3], a)
    n, res, best = integer_normal([a / np.linalg.norm(a), b / np.linalg.norm(b)], max_height=12)
    assert n is None and best is not None and res >= 1e-3


def test_integer_normal_prefers_lowest_height():
    # one direction leaves a pencil of normals; the lowest height wins
    n, _, _ = integer_normal([[0.0, 0.0, 1.0]])
    assert height(n) == 1 and n[2] == 0
    with pytest.raises(ValueError):
        nearest_primitive_direction([0, 0, 0], 3, 1e-3)
