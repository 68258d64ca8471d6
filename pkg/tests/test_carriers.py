import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fermizones.carriers import (ZoneLabel, carrier_analysis, carrier_report, coherent_class,
                                 extract_carriers, genus_of_carriers, label_from_asymptotics,
                                 lattice_normal, perturbed_fields, sample_surface_points)
from fermizones.errors import EmptyCarrier
from fermizones.lattice import ccc, evaluate, flat_torus, triangulate_level

GENERIC_B = np.array([0.2, 0.9, 0.41])  # ccc level 0: inside the zone of m = (0, 1, 0)


@given(st.lists(st.integers(-20, 20), min_size=3, max_size=3).filter(any),
       st.integers(-5, 5).filter(bool))
def test_label_normalization(m, k):
    a = ZoneLabel.integer(m)
    b = ZoneLabel.integer(np.array(m) * k)
    assert a == b
    assert ZoneLabel.from_key(a.key) == a
    first = next(v for v in a.m if v)
    assert first > 0 and np.gcd.reduce(np.abs(a.m)) == 1


def test_label_kinds():
    assert ZoneLabel.trivial().key == "trivial"
    assert ZoneLabel.from_key("undetermined").kind == "undetermined"
    assert ZoneLabel.integer([0, -3, 0]).m == (0, 1, 0)
    assert ZoneLabel.integer([1, 2, 3]).height == 3
    with pytest.raises(ValueError):
        ZoneLabel.integer([0, 0, 0])


def test_lattice_normal():
    m, ok = lattice_normal([[1, 0, 0], [0, 1, 0], [1, 1, 0]])
    assert m.tolist() == [0, 0, 1] and ok
    m, ok = lattice_normal([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    assert not ok
    assert lattice_normal([[1, 2, 3], [2, 4, 6]]) == (None, True)


def test_coherent_class():
    assert coherent_class([np.array([0, 1, 0]), np.array([0, -1, 0])]) == (0, 1, 0)
    assert coherent_class([np.array([0, 1, 0]), np.array([1, 0, 0])]) is None
    assert coherent_class([np.array([0, 2, 0])]) is None  # not primitive
    assert coherent_class([np.array([0, 0, 0])]) is None
    assert coherent_class([]) is None


def test_perturbed_fields_angle():
    B = GENERIC_B / np.linalg.norm(GENERIC_B)
    for Bp in perturbed_fields(B, np.radians(0.5)):
        assert np.degrees(np.arccos(Bp @ B)) == pytest.approx(0.5)


def test_surface_samples_on_level(rng):
    t = triangulate_level(ccc(), 0.0, 16)
    pts = sample_surface_points(t, 32, rng)
    assert pts.shape == (32, 3)
    assert np.max(np.abs(evaluate(ccc(), pts))) < 1e-10


def test_flat_torus_label_and_carriers():
    B = [0.3, 0.2, 1.0]
    lab = label_from_asymptotics(flat_torus(), 0.0, B, budget=100)
    assert lab.is_integer and lab.m == (0, 0, 1)
    c = carrier_analysis(flat_torus(), 0.0, B, resolution=12)
    assert c.open_fraction == 1.0
    assert genus_of_carriers(c) == [1, 1]
    assert coherent_class([comp.z for comp in c.components]) == (0, 0, 1)
    assert all(len(comp.loops) == 0 for comp in c.components)


def test_small_pockets_trivial_and_empty_carrier():
    lab = label_from_asymptotics(ccc(), 2.5, GENERIC_B, budget=100)
    assert lab.kind == "trivial"
    with pytest.raises(EmptyCarrier):
        extract_carriers(triangulate_level(ccc(), 2.5, 12), GENERIC_B)


def test_open_regime_carriers_match_label():
    d = ccc()
    lab = label_from_asymptotics(d, 0.0, GENERIC_B, budget=300)
    assert lab.m == (0, 1, 0)
    c = carrier_analysis(d, 0.0, GENERIC_B)
    rep = carrier_report(c, lab)
    assert [comp["genus"] for comp in rep["components"]] == [1] * len(rep["components"])
    assert rep["z"] == [0, 1, 0] and not rep["stochastic"]
    # each carrier is a cylinder closed by two planar discs
    assert all(comp["boundary_loops"] == 2 for comp in rep["components"])
    assert max(comp["plane_residual"] for comp in rep["components"]) < 1e-9


def test_vertex_cut_fragments_are_dropped():
    # inside the zone of (1, -1, 1): open triangles touching a carrier only at a
    # vertex come out as separate spheres of class 0 and are set aside
    B = np.array([0.60499554, -0.56596357, 0.56005859])
    lab = label_from_asymptotics(ccc(), 0.0, B, budget=300)
    c = carrier_analysis(ccc(), 0.0, B)
    assert lab.m == (1, -1, 1)
    assert genus_of_carriers(c) == [1, 1]
    assert coherent_class([comp.z for comp in c.components]) == (1, -1, 1)
    assert 0.0 < c.debris_fraction < 0.01
